//! Detector scoring, equal error rate, and the robustness matrix over
//! evaluation codec conditions.
//!
//! The equal error rate follows one frozen rule: sweep thresholds over the
//! sorted unique scores (plus a sentinel past the maximum), with
//! `FRR(t)` = fraction of real scores below `t` and `FAR(t)` = fraction of
//! generated scores at or above `t`, and take the crossing, linearly
//! interpolated between adjacent thresholds when no exact tie exists. The
//! result lives in percent and can exceed 50 for anti-separated scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MelFrontend, Waveform, SAMPLE_RATE};
use crate::autodiff::Graph;
use crate::channel::{Channel, CodecKind, CodecSpec};
use crate::error::{Error, Result};
use crate::models::{Detector, Generator};

/// Fraction of real scores strictly below the threshold.
fn frr_at(real: &[f64], t: f64) -> f64 {
    real.iter().filter(|&&v| v < t).count() as f64 / real.len() as f64
}

/// Fraction of generated scores at or above the threshold.
fn far_at(gen: &[f64], t: f64) -> f64 {
    gen.iter().filter(|&&v| v >= t).count() as f64 / gen.len() as f64
}

/// Equal error rate in percent of a real-vs-generated score split.
pub fn compute_eer(real: &[f64], gen: &[f64]) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::EmptyScores("real"));
    }
    if gen.is_empty() {
        return Err(Error::EmptyScores("generated"));
    }
    if real.iter().chain(gen).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite detector score".into()));
    }
    let mut thresholds: Vec<f64> = real.iter().chain(gen).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let top = *thresholds.last().unwrap();
    // Sentinel past every score: FRR 1, FAR 0, so a crossing always exists.
    thresholds.push(top + 1.0);

    let mut below: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let fr = frr_at(real, t);
        let fa = far_at(gen, t);
        if fr >= fa {
            if fr == fa {
                return Ok(fr * 100.0);
            }
            // The crossing sits between this threshold and the previous one;
            // interpolate both rates linearly and solve FRR = FAR. The first
            // threshold has FRR 0 < FAR 1, so a previous point exists.
            let (fr1, fa1) = below.expect("first threshold cannot cross");
            let alpha = (fa1 - fr1) / ((fr - fr1) + (fa1 - fa));
            return Ok((fr1 + alpha * (fr - fr1)) * 100.0);
        }
        below = Some((fr, fa));
    }
    unreachable!("sentinel threshold rejects everything")
}

/// Raw detector outputs for one codec condition and repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub real_scores: Vec<f64>,
    pub gen_scores: Vec<f64>,
    pub condition: CodecSpec,
    pub repetition: usize,
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.real_scores.is_empty() {
            return Err(Error::EmptyScores("real"));
        }
        if self.gen_scores.is_empty() {
            return Err(Error::EmptyScores("generated"));
        }
        if self
            .real_scores
            .iter()
            .chain(&self.gen_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Invalid("non-finite detector score".into()));
        }
        Ok(())
    }

    pub fn eer_percent(&self) -> Result<f64> {
        compute_eer(&self.real_scores, &self.gen_scores)
    }
}

/// The evaluation conditions in report row order.
pub fn evaluation_conditions() -> Vec<CodecSpec> {
    let mut v = vec![CodecSpec::none(), CodecSpec::neural_rvq()];
    for &kbps in &[16, 32, 64, 128] {
        v.push(CodecSpec::ogg_opus(kbps));
    }
    for &kbps in &[16, 32, 64, 128] {
        v.push(CodecSpec::mp3(kbps));
    }
    for &q in &[1, 2, 3] {
        v.push(CodecSpec::ogg_vorbis(q));
    }
    v
}

/// One matrix cell: a condition's EER for one system, averaged over
/// repetitions, with the per-repetition values kept for exact rebuilds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCell {
    pub condition: String,
    pub eer_percent: f64,
    pub per_repetition: Vec<f64>,
    pub repetitions: usize,
}

impl ConditionCell {
    fn from_reps(condition: String, per_repetition: Vec<f64>) -> ConditionCell {
        let n = per_repetition.len();
        let mean = per_repetition.iter().sum::<f64>() / n as f64;
        ConditionCell {
            condition,
            eer_percent: mean,
            per_repetition,
            repetitions: n,
        }
    }
}

/// One trained system's column: per-condition cells plus the two pooled
/// rows. Pooling concatenates the per-condition score sets of a repetition
/// into one detection task; it is not a mean of per-condition EERs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemColumn {
    pub system: String,
    pub cells: Vec<ConditionCell>,
    pub pooled: ConditionCell,
    /// Pooled over every condition except the neural codec.
    pub pooled_without_neural: ConditionCell,
}

/// EER columns for one or more systems over a shared condition list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMatrix {
    pub conditions: Vec<CodecSpec>,
    pub repetitions: usize,
    pub columns: Vec<SystemColumn>,
}

impl RobustnessMatrix {
    pub fn single(conditions: Vec<CodecSpec>, repetitions: usize, column: SystemColumn) -> Self {
        RobustnessMatrix {
            conditions,
            repetitions,
            columns: vec![column],
        }
    }

    /// Add another system's column; its conditions and repetition count must
    /// match the matrix.
    pub fn add_column(&mut self, column: SystemColumn) -> Result<()> {
        let labels: Vec<String> = self.conditions.iter().map(|c| c.label()).collect();
        let got: Vec<String> = column.cells.iter().map(|c| c.condition.clone()).collect();
        if labels != got {
            return Err(Error::Invalid(
                "system evaluated under different conditions than the matrix".into(),
            ));
        }
        if column.pooled.repetitions != self.repetitions {
            return Err(Error::Invalid(
                "system evaluated with a different repetition count".into(),
            ));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for col in &self.columns {
            for cell in col
                .cells
                .iter()
                .chain([&col.pooled, &col.pooled_without_neural])
            {
                if !(0.0..=100.0).contains(&cell.eer_percent) {
                    return Err(Error::Invalid(format!(
                        "EER {} out of [0, 100] in {} / {}",
                        cell.eer_percent, col.system, cell.condition
                    )));
                }
                if cell.per_repetition.len() != cell.repetitions {
                    return Err(Error::Invalid(format!(
                        "repetition count mismatch in {} / {}",
                        col.system, cell.condition
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How a system is scored and sampled during evaluation.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub system: String,
    pub conditions: Vec<CodecSpec>,
    pub repetitions: usize,
    /// Evaluation window per clip; clips shorter than this are zero-padded.
    pub crop_len: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            system: "system".into(),
            conditions: evaluation_conditions(),
            repetitions: 5,
            crop_len: 16_384,
            seed: 0,
        }
    }
}

/// Whether a batch fed to a [`Scorer`] came from real clips or the
/// generator. The production scorer must ignore it; it exists so tests can
/// inject a provenance oracle and pin the surrounding bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Generated,
}

/// Scores whole waveforms, one scalar per clip.
pub trait Scorer {
    fn score_batch(&self, batch: &[Waveform], provenance: Provenance) -> Result<Vec<f64>>;
}

/// The trained watermark detector as a scorer.
pub struct DetectorScorer<'a> {
    pub wm: &'a Detector,
}

impl Scorer for DetectorScorer<'_> {
    fn score_batch(&self, batch: &[Waveform], _provenance: Provenance) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyScores("batch"));
        }
        let t = batch[0].len();
        if batch.iter().any(|w| w.len() != t) {
            return Err(Error::Invalid("ragged evaluation batch".into()));
        }
        let mut data = Vec::with_capacity(batch.len() * t);
        for w in batch {
            data.extend_from_slice(&w.samples);
        }
        let mut g = Graph::new();
        let b = self.wm.bind_frozen(&mut g);
        let x = g.leaf(crate::autodiff::Tensor::new(vec![batch.len(), 1, t], data));
        let scores = self.wm.forward(&mut g, &b, x)?;
        Ok(g.value(scores).data().to_vec())
    }
}

const EVAL_STREAM: u64 = 4;

fn rep_stream(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((EVAL_STREAM << 32) | rep as u64);
    rng
}

/// Crop one evaluation window per clip, zero-padding short clips.
fn crop_batch(clips: &[Waveform], len: usize, rng: &mut ChaCha8Rng) -> Vec<Waveform> {
    clips
        .iter()
        .map(|clip| {
            let mut out = vec![0.0; len];
            if clip.len() > len {
                let offset = rng.random_range(0..=clip.len() - len);
                out.copy_from_slice(&clip.samples[offset..offset + len]);
            } else {
                out[..clip.len()].copy_from_slice(&clip.samples);
            }
            Waveform::new(out, clip.sample_rate)
        })
        .collect()
}

/// Re-synthesize each clip from its own mel analysis, value-level.
pub fn generate_batch(
    gen: &Generator,
    frontend: &MelFrontend,
    crops: &[Waveform],
) -> Result<Vec<Waveform>> {
    if crops.is_empty() {
        return Err(Error::EmptyScores("batch"));
    }
    let t = crops[0].len();
    let mut data = Vec::with_capacity(crops.len() * t);
    for w in crops {
        data.extend_from_slice(&w.samples);
    }
    let mut g = Graph::new();
    let b = gen.bind_frozen(&mut g);
    let x = g.leaf(crate::autodiff::Tensor::new(vec![crops.len(), 1, t], data));
    let mel = frontend.log_mel_graph(&mut g, x);
    let out = gen.forward(&mut g, &b, mel);
    let value = g.value(out);
    let t_out = *value.shape().last().unwrap();
    Ok((0..crops.len())
        .map(|r| {
            Waveform::new(
                value.data()[r * t_out..(r + 1) * t_out].to_vec(),
                SAMPLE_RATE,
            )
        })
        .collect())
}

/// Evaluate one system over codec conditions and repetitions. Repetitions
/// differ only in their crop windows; weights stay fixed. Returns the
/// system's matrix column plus every raw score set for audit.
pub fn evaluate_system(
    gen: &Generator,
    frontend: &MelFrontend,
    scorer: &dyn Scorer,
    channel: &Channel,
    clips: &[Waveform],
    opts: &EvalOptions,
) -> Result<(SystemColumn, Vec<ScoreSet>)> {
    if clips.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty corpus".into()));
    }
    if opts.conditions.is_empty() {
        return Err(Error::Invalid("no evaluation conditions given".into()));
    }
    if opts.repetitions == 0 {
        return Err(Error::Invalid("repetitions must be at least 1".into()));
    }
    for spec in &opts.conditions {
        spec.validate()?;
    }

    let mut sets = Vec::with_capacity(opts.conditions.len() * opts.repetitions);
    for rep in 0..opts.repetitions {
        let mut rng = rep_stream(opts.seed, rep);
        let crops = crop_batch(clips, opts.crop_len, &mut rng);
        let generated = generate_batch(gen, frontend, &crops)?;

        for spec in &opts.conditions {
            let real_out: Vec<Waveform> = channel
                .channel_augment(&crops, spec)?
                .into_iter()
                .map(|r| r.output)
                .collect();
            let gen_out: Vec<Waveform> = channel
                .channel_augment(&generated, spec)?
                .into_iter()
                .map(|r| r.output)
                .collect();
            let real_scores = scorer.score_batch(&real_out, Provenance::Real)?;
            let gen_scores = scorer.score_batch(&gen_out, Provenance::Generated)?;
            let set = ScoreSet {
                real_scores,
                gen_scores,
                condition: *spec,
                repetition: rep,
            };
            set.validate()?;
            sets.push(set);
        }
    }
    let column = column_from_sets(&opts.system, &opts.conditions, opts.repetitions, &sets)?;
    Ok((column, sets))
}

/// Aggregate raw score sets into one system's matrix column. This is the
/// single definition of per-condition averaging and of pooling, used both
/// live and when re-rendering stored scores.
pub fn column_from_sets(
    system: &str,
    conditions: &[CodecSpec],
    repetitions: usize,
    sets: &[ScoreSet],
) -> Result<SystemColumn> {
    if conditions.is_empty() || repetitions == 0 {
        return Err(Error::Invalid("empty evaluation grid".into()));
    }
    let find = |spec: &CodecSpec, rep: usize| -> Result<&ScoreSet> {
        let mut hits = sets
            .iter()
            .filter(|s| s.repetition == rep && s.condition == *spec);
        let hit = hits.next().ok_or_else(|| {
            Error::Invalid(format!(
                "no score set for condition {} repetition {rep}",
                spec.label()
            ))
        })?;
        if hits.next().is_some() {
            return Err(Error::Invalid(format!(
                "duplicate score set for condition {} repetition {rep}",
                spec.label()
            )));
        }
        Ok(hit)
    };

    let mut per_cond: Vec<Vec<f64>> = vec![Vec::with_capacity(repetitions); conditions.len()];
    let mut pooled = Vec::with_capacity(repetitions);
    let mut pooled_wo = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut all_real = Vec::new();
        let mut all_gen = Vec::new();
        let mut trad_real = Vec::new();
        let mut trad_gen = Vec::new();
        for (ci, spec) in conditions.iter().enumerate() {
            let set = find(spec, rep)?;
            set.validate()?;
            per_cond[ci].push(set.eer_percent()?);
            all_real.extend_from_slice(&set.real_scores);
            all_gen.extend_from_slice(&set.gen_scores);
            if spec.kind != CodecKind::NeuralRvq {
                trad_real.extend_from_slice(&set.real_scores);
                trad_gen.extend_from_slice(&set.gen_scores);
            }
        }
        pooled.push(compute_eer(&all_real, &all_gen)?);
        if trad_real.is_empty() {
            // Every condition was neural; the reduced pool equals the full one.
            pooled_wo.push(*pooled.last().unwrap());
        } else {
            pooled_wo.push(compute_eer(&trad_real, &trad_gen)?);
        }
    }

    let cells = conditions
        .iter()
        .zip(per_cond)
        .map(|(spec, reps)| ConditionCell::from_reps(spec.label(), reps))
        .collect();
    Ok(SystemColumn {
        system: system.into(),
        cells,
        pooled: ConditionCell::from_reps("pooled".into(), pooled),
        pooled_without_neural: ConditionCell::from_reps("pooled_wo_neural".into(), pooled_wo),
    })
}

/// Raw evaluation output, sufficient to re-render every report artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScores {
    pub system: String,
    pub conditions: Vec<CodecSpec>,
    pub repetitions: usize,
    pub sets: Vec<ScoreSet>,
}

impl RawScores {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("score serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<RawScores> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("score parse: {e}")))
    }

    /// Rebuild the matrix column exactly as the original evaluation did.
    pub fn to_matrix(&self) -> Result<RobustnessMatrix> {
        let column =
            column_from_sets(&self.system, &self.conditions, self.repetitions, &self.sets)?;
        Ok(RobustnessMatrix::single(
            self.conditions.clone(),
            self.repetitions,
            column,
        ))
    }
}

/// One flat line of the structured report: the audit-friendly schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub condition: String,
    pub system: String,
    pub repetition: usize,
    pub eer_percent: f64,
    pub n_real: usize,
    pub n_gen: usize,
}

/// The structured report file: flat per-repetition records plus the complete
/// matrix, so a reader can either audit rows or rebuild the table exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<EvalRecord>,
    pub matrix: RobustnessMatrix,
}

fn records_for(matrix: &RobustnessMatrix, sets: &[ScoreSet]) -> Vec<EvalRecord> {
    let mut records = Vec::new();
    for col in &matrix.columns {
        for cell in col
            .cells
            .iter()
            .chain([&col.pooled, &col.pooled_without_neural])
        {
            for (rep, &eer) in cell.per_repetition.iter().enumerate() {
                let (n_real, n_gen) = sets
                    .iter()
                    .filter(|s| s.repetition == rep)
                    .filter(|s| s.condition.label() == cell.condition)
                    .fold((0, 0), |(a, b), s| {
                        (a + s.real_scores.len(), b + s.gen_scores.len())
                    });
                // Pooled rows aggregate every set of the repetition.
                let (n_real, n_gen) = if n_real == 0 {
                    sets.iter().filter(|s| s.repetition == rep).fold(
                        (0, 0),
                        |(a, b), s| (a + s.real_scores.len(), b + s.gen_scores.len()),
                    )
                } else {
                    (n_real, n_gen)
                };
                records.push(EvalRecord {
                    condition: cell.condition.clone(),
                    system: col.system.clone(),
                    repetition: rep,
                    eer_percent: eer,
                    n_real,
                    n_gen,
                });
            }
        }
    }
    records
}

/// Write the delimiter-separated table and the structured record file.
/// Rows follow the matrix's condition order, then the two pooled rows.
pub fn emit_report(
    matrix: &RobustnessMatrix,
    sets: &[ScoreSet],
    csv_path: &std::path::Path,
    json_path: &std::path::Path,
) -> Result<()> {
    matrix.validate()?;
    let mut csv = String::from("condition");
    for col in &matrix.columns {
        csv.push(',');
        csv.push_str(&col.system);
    }
    csv.push('\n');
    let n_rows = matrix.conditions.len();
    for row in 0..n_rows + 2 {
        let label = match row {
            r if r < n_rows => matrix.conditions[r].label(),
            r if r == n_rows => "pooled".into(),
            _ => "pooled_wo_neural".into(),
        };
        csv.push_str(&label);
        for col in &matrix.columns {
            let cell = match row {
                r if r < n_rows => &col.cells[r],
                r if r == n_rows => &col.pooled,
                _ => &col.pooled_without_neural,
            };
            csv.push_str(&format!(",{:.4}", cell.eer_percent));
        }
        csv.push('\n');
    }
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;

    let report = Report {
        records: records_for(matrix, sets),
        matrix: matrix.clone(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Invalid(format!("report serialization: {e}")))?;
    std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
}

/// Read back a structured report written by [`emit_report`].
pub fn read_report(json_path: &std::path::Path) -> Result<Report> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("report parse: {e}")))
}
