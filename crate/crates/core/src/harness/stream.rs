use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{load_dataset, Dataset, ExperimentConfig};
use super::trainer::{IngestionCounts, Models, Trainer};
use crate::error::{Error, Result};
use crate::losses::{LossKind, ZSource};
use crate::metrics::{write_metrics_csv, MetricsReport};
use crate::model::save_checkpoint;
use crate::model::Checkpoint;
use crate::pipelines::{build_observed_stream, Mechanism};
use crate::types::{ClickEvent, Seconds, HOUR};

/// Time-ordered clicks cut at a count fraction.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub pretrain: &'a [ClickEvent],
    pub stream: &'a [ClickEvent],
    /// Click time of the first streaming click; hour 0 starts here.
    pub t_split: Seconds,
}

pub fn split(clicks: &[ClickEvent], pretrain_fraction: f64) -> Result<Split<'_>> {
    if clicks.windows(2).any(|p| p[0].click_time > p[1].click_time) {
        return Err(Error::Config("clicks must be ordered by click time".into()));
    }
    let n = ((clicks.len() as f64) * pretrain_fraction).round() as usize;
    if n == 0 || n >= clicks.len() {
        return Err(Error::Config(format!(
            "pretrain fraction {pretrain_fraction} of {} clicks leaves an empty split",
            clicks.len()
        )));
    }
    let (pretrain, stream) = clicks.split_at(n);
    Ok(Split { pretrain, stream, t_split: stream[0].click_time })
}

/// Builds the arm's models and fits them on the pretraining split.
pub fn split_and_pretrain<'a>(
    dataset: &'a Dataset,
    config: &ExperimentConfig,
) -> Result<(Trainer, Split<'a>)> {
    let split = split(&dataset.clicks, config.pretrain_fraction)?;
    let mut trainer = Trainer::new(config, dataset.input_dim, dataset.truth.clone())?;
    trainer.pretrain(split.pretrain, split.t_split)?;
    Ok((trainer, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourReport {
    /// Training hour; evaluation is on the clicks of the following hour.
    pub hour: usize,
    pub train: IngestionCounts,
    pub test: MetricsReport,
    pub pretrained_test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub arm: String,
    pub config: ExperimentConfig,
    pub hours: Vec<HourReport>,
    pub aggregate: MetricsReport,
    /// The frozen pretrained model on the same test hours.
    pub pretrained: MetricsReport,
    /// Seconds spent in the run; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub report: StreamReport,
    pub models: Models,
}

fn hour_of(t: Seconds, t_split: Seconds) -> usize {
    ((t - t_split) / HOUR) as usize
}

/// Evaluates `score` on clicks against their attributed labels.
pub fn evaluate_clicks<F>(clicks: &[&ClickEvent], score: F) -> Result<MetricsReport>
where
    F: Fn(&ClickEvent) -> Result<f64>,
{
    let scores = clicks.iter().map(|c| score(c)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = clicks.iter().map(|c| c.converts()).collect();
    MetricsReport::evaluate(&scores, &labels)
}

/// Pretrains, then for every hour `t` trains on the ingestions of hour `t`
/// and evaluates on the clicks of hour `t + 1`.
pub fn stream_run_on(dataset: &Dataset, config: &ExperimentConfig) -> Result<StreamRun> {
    let started = Instant::now();
    let (mut trainer, split) = split_and_pretrain(dataset, config)?;
    let pretrained = trainer.clone();
    let stream = build_observed_stream(split.stream, config.pipeline, &config.windows)?;

    let n_hours = config.hours;
    let mut train_slices: Vec<&[_]> = Vec::with_capacity(n_hours);
    let mut rest = &stream[..];
    for h in 0..n_hours {
        let end = rest.partition_point(|s| hour_of(s.ingestion_time, split.t_split) <= h);
        train_slices.push(&rest[..end]);
        rest = &rest[end..];
    }
    let mut test_slices: Vec<Vec<&ClickEvent>> = vec![Vec::new(); n_hours];
    for c in split.stream {
        let h = hour_of(c.click_time, split.t_split);
        if h < n_hours {
            test_slices[h].push(c);
        }
    }

    let mut hours = Vec::with_capacity(n_hours - 1);
    let mut last_trained: Option<Seconds> = None;
    for t in 0..n_hours - 1 {
        let slice = train_slices[t];
        let train = trainer.train_slice(slice)?;
        if let Some(s) = slice.last() {
            last_trained = Some(s.ingestion_time);
        }
        let test_clicks = &test_slices[t + 1];
        if let (Some(trained), Some(first)) = (last_trained, test_clicks.first()) {
            if first.click_time <= trained {
                return Err(Error::Fault(format!(
                    "test click {} at {} precedes training ingestion at {trained}",
                    first.click_id, first.click_time
                )));
            }
        }
        let test = evaluate_clicks(test_clicks, |c| trainer.served(&c.features))?;
        let pretrained_test = evaluate_clicks(test_clicks, |c| pretrained.served(&c.features))?;
        log::debug!("{} hour {t}: {} ingestions, auc {:?}", config.arm_name(), train.total, test.auc);
        hours.push(HourReport { hour: t, train, test, pretrained_test });
    }
    let aggregate = MetricsReport::aggregate(hours.iter().map(|h| &h.test));
    let pretrained_agg = MetricsReport::aggregate(hours.iter().map(|h| &h.pretrained_test));
    let report = StreamReport {
        arm: config.arm_name(),
        config: config.clone(),
        hours,
        aggregate,
        pretrained: pretrained_agg,
        wall_clock: started.elapsed().as_secs_f64(),
    };
    Ok(StreamRun { report, models: trainer.models })
}

pub fn stream_run(config: &ExperimentConfig) -> Result<StreamRun> {
    let dataset = load_dataset(config)?;
    stream_run_on(&dataset, config)
}

/// Arms of a grid over pipelines, losses and fake-negative sources, skipping
/// losses not defined on a pipeline. The fake-negative source only varies for
/// losses that use one.
pub fn grid_configs(
    base: &ExperimentConfig,
    pipelines: &[Mechanism],
    losses: &[LossKind],
    zs: &[ZSource],
) -> Vec<ExperimentConfig> {
    let default_z = [base.z];
    let zs = if zs.is_empty() { &default_z[..] } else { zs };
    let mut out = Vec::new();
    for &pipeline in pipelines {
        for &loss in losses {
            if !loss.compatible(pipeline) {
                continue;
            }
            let arm_zs = if loss.uses_z() { zs } else { &zs[..1] };
            for &z in arm_zs {
                out.push(ExperimentConfig { pipeline, loss, z, ..base.clone() });
            }
        }
    }
    out
}

/// Runs arms sharing one dataset on up to `threads` worker threads. Results
/// come back in the order of `configs`.
pub fn run_grid(dataset: &Dataset, configs: &[ExperimentConfig], threads: usize) -> Vec<Result<StreamRun>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<StreamRun>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(config) = configs.get(i) else { break };
                let run = stream_run_on(dataset, config);
                results.lock().expect("result slot lock")[i] = Some(run);
            });
        }
    });
    results.into_inner().expect("result slot lock").into_iter().map(|r| r.expect("every arm ran")).collect()
}

/// One row of the relative-improvement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arm: String,
    pub metrics: MetricsReport,
}

/// Relative improvement of every arm over the pretrained model, normalized
/// by the oracle arm. Arms must share the oracle's protocol.
pub fn compare_runs(
    reports: &[StreamReport],
    pretrained: &MetricsReport,
    oracle: &StreamReport,
) -> Result<Vec<ComparisonRow>> {
    for r in reports {
        if !r.config.same_protocol(&oracle.config) {
            return Err(Error::Config(format!("arm {} was run under a different protocol than the oracle", r.arm)));
        }
    }
    let mut rows = vec![
        ComparisonRow { arm: "pretrained".into(), metrics: pretrained.clone().with_relative(pretrained, &oracle.aggregate) },
        ComparisonRow {
            arm: format!("oracle ({})", oracle.arm),
            metrics: oracle.aggregate.clone().with_relative(pretrained, &oracle.aggregate),
        },
    ];
    rows.extend(reports.iter().map(|r| ComparisonRow {
        arm: r.arm.clone(),
        metrics: r.aggregate.clone().with_relative(pretrained, &oracle.aggregate),
    }));
    Ok(rows)
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let labelled: Vec<(String, &MetricsReport)> = rows.iter().map(|r| (r.arm.clone(), &r.metrics)).collect();
    write_metrics_csv(fs::File::create(path)?, &labelled)
}

/// Serialized report exactly as written to `report.json`.
pub fn report_json(report: &StreamReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `report.json`, `report.csv` and `checkpoints/` into `dir`.
pub fn write_run(dir: &Path, run: &StreamRun) -> Result<()> {
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("report.json"), report_json(&run.report)?)?;
    let mut rows: Vec<(String, &MetricsReport)> =
        run.report.hours.iter().map(|h| (h.hour.to_string(), &h.test)).collect();
    rows.push(("all".into(), &run.report.aggregate));
    rows.push(("pretrained".into(), &run.report.pretrained));
    write_metrics_csv(fs::File::create(dir.join("report.csv"))?, &rows)?;
    save_checkpoint(&dir.join("checkpoints/f_theta.json"), &run.models.f_theta.checkpoint())?;
    save_checkpoint(&dir.join("checkpoints/f_dp.json"), &Checkpoint::mlp(&run.models.f_dp))?;
    save_checkpoint(&dir.join("checkpoints/f_rn.json"), &Checkpoint::mlp(&run.models.f_rn))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<StreamReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
