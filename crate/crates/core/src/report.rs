//! MACs/parameter accounting, run artifacts, and summary recomputation.
//!
//! One run directory holds: `steps.csv` (per-step metrics), one
//! `channels_<checkpoint>.csv` per snapshot, `prune_events.csv`, and
//! `summary.json`. All files are byte-deterministic given config and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::{Model, SubmoduleSlot};
use crate::pipeline::{Checkpoint, RunLog};

/// Multiply-accumulates per forward pass and parameter count.
///
/// A dense `m × n` layer contributes `m·n` MACs and `m·n + m` parameters;
/// the learnable activation contributes `2·N_W` parameters while the
/// submodule is extended and no MACs.
pub fn count_macs_params(model: &Model) -> (u64, u64) {
    let sub = model.slot.submodule();
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for l in &model.pre {
        shapes.push((l.output_dim(), l.input_dim()));
    }
    shapes.push((sub.hidden_dim(), sub.input_dim()));
    shapes.push((sub.output_dim(), sub.hidden_dim()));
    for l in &model.post {
        shapes.push((l.output_dim(), l.input_dim()));
    }
    let mut macs = 0u64;
    let mut params = 0u64;
    for (m, n) in shapes {
        macs += (m * n) as u64;
        params += (m * n + m) as u64;
    }
    if model.slot.is_extended() {
        params += 2 * sub.hidden_dim() as u64;
    }
    (macs, params)
}

/// Decision margin in decades at a prune event: smallest `log₁₀ c` among
/// pruned channels minus largest among kept ones. `None` when the split is
/// trivial (nothing pruned, or everything) or not finite.
pub fn bifurcation_margin_log10(c: &[f64], pruned: &[usize]) -> Option<f64> {
    if pruned.is_empty() || pruned.len() >= c.len() {
        return None;
    }
    let mut min_pruned = f64::INFINITY;
    let mut max_kept = f64::NEG_INFINITY;
    for (i, &ci) in c.iter().enumerate() {
        if pruned.contains(&i) {
            min_pruned = min_pruned.min(ci);
        } else {
            max_kept = max_kept.max(ci);
        }
    }
    let margin = min_pruned.log10() - max_kept.log10();
    margin.is_finite().then_some(margin)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    /// Final test metrics; absent for empty runs.
    pub final_test_acc: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub macs_dense: u64,
    pub macs_final: u64,
    pub params_dense: u64,
    pub params_final: u64,
    /// `macs_dense / macs_final`.
    pub speedup: f64,
    pub channels_pruned_opt1: usize,
    pub channels_pruned_opt2: usize,
    pub margin_log10_opt1: Option<f64>,
    pub margin_log10_opt2: Option<f64>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Derives the summary from a run log plus the dense/final model counts.
pub fn build_summary(
    log: &RunLog,
    cfg: &ExperimentConfig,
    dense: (u64, u64),
    final_counts: (u64, u64),
) -> Summary {
    let last = log.steps.last();
    let event = |i: usize| log.prune_events.get(i);
    let margin = |ckpt: Checkpoint, i: usize| {
        let snap = log.snapshot(ckpt)?;
        bifurcation_margin_log10(&snap.c, &event(i)?.pruned)
    };
    Summary {
        final_test_acc: last.map(|s| s.test_acc),
        final_test_loss: last.map(|s| s.test_loss),
        macs_dense: dense.0,
        macs_final: final_counts.0,
        params_dense: dense.1,
        params_final: final_counts.1,
        speedup: dense.0 as f64 / final_counts.0.max(1) as f64,
        channels_pruned_opt1: event(0).map(|e| e.pruned.len()).unwrap_or(0),
        channels_pruned_opt2: event(1).map(|e| e.pruned.len()).unwrap_or(0),
        margin_log10_opt1: margin(Checkpoint::PostOpt1, 0),
        margin_log10_opt2: margin(Checkpoint::PostOpt2, 1),
        seed: cfg.train.seed,
        config: cfg.clone(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Writes all run artifacts into `outdir`, returning the paths written.
pub fn emit_reports(log: &RunLog, summary: &Summary, outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::new();

    let steps_path = outdir.join("steps.csv");
    {
        let mut out = create(&steps_path)?;
        (|| -> std::io::Result<()> {
            writeln!(out, "step,phase,train_loss,reg_value,test_loss,test_acc")?;
            for s in &log.steps {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.step,
                    s.phase.as_str(),
                    s.train_loss,
                    s.reg_value,
                    s.test_loss,
                    s.test_acc
                )?;
            }
            out.flush()
        })()
        .map_err(|e| Error::io(&steps_path, e))?;
    }
    written.push(steps_path);

    let layer = summary.config.target_layer;
    for snap in &log.snapshots {
        let path = outdir.join(format!("channels_{}.csv", snap.checkpoint.as_str()));
        let mut out = create(&path)?;
        (|| -> std::io::Result<()> {
            writeln!(out, "layer,channel,c,filter_norm,d")?;
            for (i, ((&c, &n), &d)) in snap
                .c
                .iter()
                .zip(&snap.filter_norm)
                .zip(&snap.d)
                .enumerate()
            {
                writeln!(out, "{layer},{i},{c},{n},{d}")?;
            }
            out.flush()
        })()
        .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let events_path = outdir.join("prune_events.csv");
    {
        let mut out = create(&events_path)?;
        (|| -> std::io::Result<()> {
            writeln!(
                out,
                "phase,pruned_count,delta_acc,delta_loss,macs_before,macs_after"
            )?;
            for e in &log.prune_events {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    e.phase.as_str(),
                    e.pruned.len(),
                    e.delta_acc,
                    e.delta_loss,
                    e.macs_before,
                    e.macs_after
                )?;
            }
            out.flush()
        })()
        .map_err(|e| Error::io(&events_path, e))?;
    }
    written.push(events_path);

    let summary_path = outdir.join("summary.json");
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    std::fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    Ok(written)
}

struct StepsRow {
    phase: String,
    test_loss: f64,
    test_acc: f64,
}

fn parse_steps_csv(path: &Path) -> Result<Vec<StepsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::CsvParse {
                path: path.into(),
                line: lineno + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::CsvParse {
                path: path.into(),
                line: lineno + 1,
                message: format!("bad {what} '{s}'"),
            })
        };
        rows.push(StepsRow {
            phase: fields[1].to_owned(),
            test_loss: parse(fields[4], "test_loss")?,
            test_acc: parse(fields[5], "test_acc")?,
        });
    }
    Ok(rows)
}

struct EventRow {
    phase: String,
    pruned_count: usize,
    delta_acc: f64,
    delta_loss: f64,
    macs_before: u64,
    macs_after: u64,
}

fn parse_events_csv(path: &Path) -> Result<Vec<EventRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::CsvParse {
                path: path.into(),
                line: lineno + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str, s: &str| Error::CsvParse {
            path: path.into(),
            line: lineno + 1,
            message: format!("bad {what} '{s}'"),
        };
        rows.push(EventRow {
            phase: fields[0].to_owned(),
            pruned_count: fields[1].parse().map_err(|_| bad("count", fields[1]))?,
            delta_acc: fields[2].parse().map_err(|_| bad("delta_acc", fields[2]))?,
            delta_loss: fields[3].parse().map_err(|_| bad("delta_loss", fields[3]))?,
            macs_before: fields[4].parse().map_err(|_| bad("macs", fields[4]))?,
            macs_after: fields[5].parse().map_err(|_| bad("macs", fields[5]))?,
        });
    }
    Ok(rows)
}

fn parse_channels_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut c = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::CsvParse {
                path: path.into(),
                line: lineno + 1,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        c.push(fields[2].parse().map_err(|_| Error::CsvParse {
            path: path.into(),
            line: lineno + 1,
            message: format!("bad c value '{}'", fields[2]),
        })?);
    }
    Ok(c)
}

/// Recomputes the derived summary fields from a run directory's CSV logs,
/// cross-checking that the prune-event deltas match the boundary rows of
/// `steps.csv`. The config echo and dense counts come from the existing
/// `summary.json`.
pub fn recompute_summary(run_dir: &Path) -> Result<Summary> {
    let summary_path = run_dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let stored: Summary = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", summary_path.display())))?;

    let steps = parse_steps_csv(&run_dir.join("steps.csv"))?;
    let events = parse_events_csv(&run_dir.join("prune_events.csv"))?;

    // Cross-file consistency: each event's deltas must equal the difference
    // of the adjacent boundary evaluations in steps.csv.
    for (idx, ev) in events.iter().enumerate() {
        let pre_tag = format!("prune{}-pre", idx + 1);
        let post_tag = format!("prune{}-post", idx + 1);
        let pre = steps.iter().find(|r| r.phase == pre_tag);
        let post = steps.iter().find(|r| r.phase == post_tag);
        if let (Some(pre), Some(post)) = (pre, post) {
            let d_acc = post.test_acc - pre.test_acc;
            let d_loss = post.test_loss - pre.test_loss;
            if (d_acc - ev.delta_acc).abs() > 1e-12 || (d_loss - ev.delta_loss).abs() > 1e-12 {
                return Err(Error::Verification(format!(
                    "prune event {} deltas disagree with steps.csv: ({}, {}) vs ({}, {})",
                    idx + 1,
                    ev.delta_acc,
                    ev.delta_loss,
                    d_acc,
                    d_loss
                )));
            }
        } else {
            return Err(Error::Verification(format!(
                "steps.csv lacks boundary rows for prune event {}",
                idx + 1
            )));
        }
    }

    // The extension adds no MACs, so the first event starts from the dense
    // count.
    if let Some(first) = events.first() {
        if first.macs_before != stored.macs_dense {
            return Err(Error::Verification(format!(
                "first prune event starts at {} MACs but summary.json records {} dense MACs",
                first.macs_before, stored.macs_dense
            )));
        }
    }
    let macs_final = events.last().map(|e| e.macs_after).unwrap_or(stored.macs_dense);
    // Margins from the pre-prune snapshots; pruned set = ratios above 1.
    let margin_from = |name: &str| -> Result<Option<f64>> {
        let path = run_dir.join(format!("channels_{name}.csv"));
        if !path.exists() {
            return Ok(None);
        }
        let c = parse_channels_csv(&path)?;
        let pruned: Vec<usize> = c
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 1.0)
            .map(|(i, _)| i)
            .collect();
        Ok(bifurcation_margin_log10(&c, &pruned))
    };

    let count_for = |tag: &str| {
        events
            .iter()
            .find(|e| e.phase == tag)
            .map(|e| e.pruned_count)
            .unwrap_or(0)
    };

    let params_final = stored.params_final; // structure unchanged after the log
    Ok(Summary {
        final_test_acc: steps.last().map(|r| r.test_acc),
        final_test_loss: steps.last().map(|r| r.test_loss),
        macs_dense: stored.macs_dense,
        macs_final,
        params_dense: stored.params_dense,
        params_final,
        speedup: stored.macs_dense as f64 / macs_final.max(1) as f64,
        channels_pruned_opt1: count_for("opt1"),
        channels_pruned_opt2: count_for("opt2"),
        margin_log10_opt1: margin_from("post-opt1")?,
        margin_log10_opt2: margin_from("post-opt2")?,
        seed: stored.seed,
        config: stored.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, ExperimentConfig};
    use crate::nn::{Activation, DenseLayer, Submodule};
    use ndarray::{Array1, Array2};

    fn dense_model(widths: &[(usize, usize)]) -> Model {
        // Builds pre layers then the submodule from the last two shapes.
        let n = widths.len();
        assert!(n >= 2);
        let pre: Vec<DenseLayer> = widths[..n - 2]
            .iter()
            .map(|&(out, inp)| {
                DenseLayer::new(Array2::zeros((out, inp)), Array1::zeros(out), Activation::Relu)
                    .unwrap()
            })
            .collect();
        let (h, i) = widths[n - 2];
        let (o, _) = widths[n - 1];
        let sub = Submodule::new(
            Array2::zeros((h, i)),
            Array1::zeros(h),
            Array2::zeros((o, h)),
            Array1::zeros(o),
            Activation::Relu,
        )
        .unwrap();
        Model {
            pre,
            slot: SubmoduleSlot::Plain(sub),
            junction: Activation::Identity,
            post: vec![],
        }
    }

    #[test]
    fn macs_single_layer() {
        // A 4×3 dense layer: 12 MACs, 16 params. Model as submodule with a
        // 1×4 head on top contributes 4 MACs / 5 params more.
        let model = dense_model(&[(4, 3), (1, 4)]);
        let (macs, params) = count_macs_params(&model);
        assert_eq!(macs, 12 + 4);
        assert_eq!(params, 16 + 5);
    }

    #[test]
    fn macs_drop_matches_arithmetic() {
        let n_i = 5;
        let n_a = 3;
        let before = dense_model(&[(8, n_i), (n_a, 8)]);
        let after = dense_model(&[(6, n_i), (n_a, 6)]);
        let (m_b, _) = count_macs_params(&before);
        let (m_a, _) = count_macs_params(&after);
        assert_eq!(m_b - m_a, 2 * (n_i + n_a) as u64);
    }

    #[test]
    fn params_match_bruteforce_enumeration() {
        let model = dense_model(&[(7, 4), (6, 7), (3, 6)]);
        let (_, params) = count_macs_params(&model);
        assert_eq!(params as usize, model.param_vec().len());
    }

    #[test]
    fn extended_slot_adds_activation_params() {
        let mut model = dense_model(&[(4, 3), (2, 4)]);
        let (_, plain) = count_macs_params(&model);
        let sub = match model.slot {
            SubmoduleSlot::Plain(s) => s,
            _ => unreachable!(),
        };
        model.slot = SubmoduleSlot::Extended(crate::catalyst::embed(sub, 1.0).unwrap());
        let (_, extended) = count_macs_params(&model);
        assert_eq!(extended, plain + 8);
    }

    #[test]
    fn margin_helper() {
        let c = [10.0, 0.1, 20.0, 0.05];
        let m = bifurcation_margin_log10(&c, &[0, 2]).unwrap();
        // min pruned = 10, max kept = 0.1 → margin 2 decades.
        assert!((m - 2.0).abs() < 1e-12);
        assert!(bifurcation_margin_log10(&c, &[]).is_none());
        assert!(bifurcation_margin_log10(&c, &[0, 1, 2, 3]).is_none());
    }

    fn empty_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic {
                kind: crate::data::DatasetKind::GaussianBlobs,
                classes: 3,
                dim: 2,
                train_samples: 10,
                test_samples: 5,
                noise: 0.1,
            },
            hidden_widths: vec![4],
            activation: Activation::Relu,
            target_layer: 0,
            output_dir: "runs/test".into(),
            train: crate::pipeline::TrainConfig::default(),
        }
    }

    #[test]
    fn empty_run_emits_valid_artifacts() {
        let log = RunLog::new();
        let cfg = empty_config();
        let summary = build_summary(&log, &cfg, (100, 120), (100, 120));
        assert!(summary.final_test_acc.is_none());
        assert_eq!(summary.speedup, 1.0);

        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&log, &summary, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("steps.csv")));
        let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
        assert_eq!(steps, "step,phase,train_loss,reg_value,test_loss,test_acc\n");

        // Round-trip: summary.json parses back to the same value.
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let parsed: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, summary);
    }
}
