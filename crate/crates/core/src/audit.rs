//! Tolerance-band anomaly audit, percent deltas and curve smoothness.

use serde::{Deserialize, Serialize};

use crate::encoder::TrainRecord;
use crate::error::{Error, Result};
use crate::regularizer::ElossBreakdown;

/// Below this many calibration breakdowns the band is built but a warning
/// is logged.
pub const MIN_RECOMMENDED_CALIBRATION: usize = 20;

pub const DEFAULT_Z: f64 = 3.0;

/// `|(observed - reference) / reference| * 100`.
pub fn percent_delta(reference: f64, observed: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedDelta);
    }
    Ok(((observed - reference) / reference).abs() * 100.0)
}

/// JSON numbers that may be `+inf`, written as the string token `"+inf"`.
pub mod extended_float {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub const INF_TOKEN: &str = "+inf";

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str(INF_TOKEN)
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "a number or \"{INF_TOKEN}\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                if v == INF_TOKEN {
                    Ok(f64::INFINITY)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandBlock {
    pub block: usize,
    /// Mean of `L_b` over the calibration set.
    pub mean: f64,
    /// Population standard deviation of `L_b`.
    pub std: f64,
}

/// Per-block band around the nominal `L_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBand {
    pub blocks: Vec<BandBlock>,
    pub z: f64,
    pub n_calib: usize,
    /// Mean of `sum_b L_b` over the calibration set; the `%Δ` reference.
    pub nominal_total: f64,
    /// Hash of the model/estimator settings the band was built under.
    #[serde(default)]
    pub settings_hash: String,
}

impl ToleranceBand {
    pub fn with_settings_hash(mut self, hash: impl Into<String>) -> Self {
        self.settings_hash = hash.into();
        self
    }

    /// Rejects a band built under different settings.
    pub fn check_settings(&self, hash: &str) -> Result<()> {
        if self.settings_hash != hash {
            return Err(Error::Config(format!(
                "band was calibrated under settings {} but the model uses {hash}",
                if self.settings_hash.is_empty() { "<none>" } else { &self.settings_hash }
            )));
        }
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population std of each block's `L_b` over nominal breakdowns.
pub fn calibrate_band(nominal: &[ElossBreakdown], z: f64) -> Result<ToleranceBand> {
    if nominal.len() < 2 {
        return Err(Error::InsufficientCalibration { got: nominal.len() });
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::Config(format!("z must be finite and >= 0, got {z}")));
    }
    let m = nominal[0].blocks.len();
    if let Some(b) = nominal.iter().find(|b| b.blocks.len() != m) {
        return Err(Error::Config(format!(
            "calibration breakdowns disagree on block count ({m} vs {})",
            b.blocks.len()
        )));
    }
    if nominal.len() < MIN_RECOMMENDED_CALIBRATION {
        log::warn!(
            "band calibrated on {} breakdowns; at least {MIN_RECOMMENDED_CALIBRATION} are recommended",
            nominal.len()
        );
    }
    let blocks = (0..m)
        .map(|b| {
            let vals: Vec<f64> = nominal.iter().map(|n| n.blocks[b].penalty).collect();
            let (mean, std) = mean_std(&vals);
            BandBlock { block: b, mean, std }
        })
        .collect();
    let totals: Vec<f64> = nominal.iter().map(ElossBreakdown::metric_total).collect();
    Ok(ToleranceBand {
        blocks,
        z,
        n_calib: nominal.len(),
        nominal_total: mean_std(&totals).0,
        settings_hash: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub block: usize,
    pub observed: f64,
    /// `(L_b - mean) / std`; `+inf` when `std == 0` and `L_b != mean`.
    #[serde(with = "extended_float")]
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub blocks: Vec<BlockVerdict>,
    #[serde(with = "extended_float")]
    pub max_z: f64,
    pub z: f64,
    pub flag: bool,
    /// Blocks whose z-score exceeds the threshold.
    pub offending: Vec<usize>,
    pub observed_total: f64,
    /// `%Δ` of `sum_b L_b` against the band's nominal mean; absent when
    /// that mean is zero.
    pub percent_delta: Option<f64>,
}

fn z_score(observed: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (observed - mean) / std
    } else if observed == mean {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn audit(observed: &ElossBreakdown, band: &ToleranceBand) -> Result<AnomalyVerdict> {
    if observed.blocks.len() != band.blocks.len() {
        return Err(Error::Config(format!(
            "observed breakdown has {} blocks, band has {}",
            observed.blocks.len(),
            band.blocks.len()
        )));
    }
    let blocks: Vec<BlockVerdict> = observed
        .blocks
        .iter()
        .zip(&band.blocks)
        .map(|(o, b)| BlockVerdict {
            block: b.block,
            observed: o.penalty,
            z_score: z_score(o.penalty, b.mean, b.std),
        })
        .collect();
    let max_z = blocks.iter().map(|b| b.z_score).fold(f64::NEG_INFINITY, f64::max);
    let offending: Vec<usize> = blocks.iter().filter(|b| b.z_score > band.z).map(|b| b.block).collect();
    let observed_total = observed.metric_total();
    Ok(AnomalyVerdict {
        flag: max_z > band.z,
        max_z,
        z: band.z,
        offending,
        observed_total,
        percent_delta: percent_delta(band.nominal_total, observed_total).ok(),
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MavpMode {
    /// `(1/N) * sum(|x_{k+1}| - |x_k|)` exactly as printed. This telescopes
    /// to `(|x_last| - |x_first|) / N`.
    #[default]
    Verbatim,
    /// `(1/N) * sum |x_{k+1} - x_k|`, a volatility score.
    AbsDiff,
}

/// Mean absolute value slope over non-overlapping windows of `window`
/// points; `x_k` is the mean of window `k` and `N` is the number of
/// consecutive window pairs. A trailing partial window is dropped.
pub fn mavp(series: &[f64], window: usize, mode: MavpMode) -> Result<f64> {
    if window == 0 {
        return Err(Error::Domain("mavp window must be positive".into()));
    }
    if series.len() < 2 * window {
        return Err(Error::Domain(format!(
            "mavp needs at least {} points for window {window}, got {}",
            2 * window,
            series.len()
        )));
    }
    let means: Vec<f64> = series
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let n = (means.len() - 1) as f64;
    let total: f64 = means
        .windows(2)
        .map(|p| match mode {
            MavpMode::Verbatim => p[1].abs() - p[0].abs(),
            MavpMode::AbsDiff => (p[1] - p[0]).abs(),
        })
        .sum();
    Ok(total / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub metric: String,
    pub max: f64,
    pub mavp: f64,
    pub mode: MavpMode,
    pub window: usize,
}

/// Named per-epoch series from training records.
pub fn record_series(records: &[TrainRecord], metric: &str) -> Result<Vec<f64>> {
    let pick = |f: &dyn Fn(&TrainRecord) -> Option<f64>| -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| f(r).ok_or_else(|| Error::Config(format!("metric {metric:?} is missing from the records"))))
            .collect()
    };
    match metric {
        "val_metric" => pick(&|r| Some(r.val_metric)),
        "task_loss" => pick(&|r| Some(r.task_loss)),
        "eloss" => pick(&|r| Some(r.eloss)),
        "confidence" => pick(&|r| r.confidence),
        "mean_penalty" => pick(&|r| Some(r.mean_penalty())),
        other => match other.strip_prefix("l_b").and_then(|b| b.parse::<usize>().ok()) {
            Some(b) => pick(&|r| r.penalties.get(b).copied()),
            None => Err(Error::Config(format!("unknown metric {other:?}"))),
        },
    }
}

/// Maximum over epochs and MAVP of one record series.
pub fn curve_stats(records: &[TrainRecord], metric: &str, window: usize, mode: MavpMode) -> Result<CurveStats> {
    let series = record_series(records, metric)?;
    if series.is_empty() {
        return Err(Error::Config("no records".into()));
    }
    Ok(CurveStats {
        metric: metric.to_string(),
        max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mavp: mavp(&series, window, mode)?,
        mode,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub label: String,
    pub max: f64,
    pub mavp: f64,
}

/// `without`, `with`, and `Delta = with - without` rows.
pub fn paired_delta_table(without: &CurveStats, with: &CurveStats) -> Vec<PairedRow> {
    vec![
        PairedRow {
            label: "without".into(),
            max: without.max,
            mavp: without.mavp,
        },
        PairedRow {
            label: "with".into(),
            max: with.max,
            mavp: with.mavp,
        },
        PairedRow {
            label: "Delta".into(),
            max: with.max - without.max,
            mavp: with.mavp - without.mavp,
        },
    ]
}
