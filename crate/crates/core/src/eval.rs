//! Accuracy metrics, multi-crop probability averaging and pass timing.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{preprocess_center, tta_crops, CropPlan, Dataset, Preprocess};
use crate::nn::{backward, forward, Mode, NetworkGraph, ParamSet};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalMode {
    CenterCrop,
    MultiCrop,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::CenterCrop => "center_crop",
            EvalMode::MultiCrop => "multi_crop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub num_samples: usize,
    pub mode: EvalMode,
    /// Forward passes (crops) spent on each image.
    pub crops_per_image: usize,
    pub per_class_accuracy: Option<Vec<f64>>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mode,samples,crops_per_image,top1,top5";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.mode.as_str(),
            self.num_samples,
            self.crops_per_image,
            self.top1,
            self.top5
        )
    }
}

/// Whether `label` ranks among the `k` largest entries of `row`; equal
/// values rank the lower class index first.
fn in_top_k(row: &[f64], label: usize, k: usize) -> bool {
    let p = row[label];
    let better = row
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count();
    better < k
}

/// Fraction of rows whose label is among the `k` most probable classes.
pub fn topk_accuracy(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape("topk_accuracy", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let classes = probs[0].len();
    if k == 0 || k > classes {
        return Err(Error::invalid(format!("k = {k} outside 1..={classes}")));
    }
    let mut hits = 0usize;
    for (i, (row, &label)) in probs.iter().zip(labels).enumerate() {
        if row.len() != classes {
            return Err(Error::shape("topk_accuracy", classes, row.len()));
        }
        if label >= classes {
            return Err(Error::Label { label, classes, sample: i });
        }
        hits += in_top_k(row, label, k) as usize;
    }
    Ok(hits as f64 / probs.len() as f64)
}

/// Arithmetic mean of probability vectors, summed in list order.
pub fn average_probs(crop_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = crop_probs
        .first()
        .ok_or_else(|| Error::invalid("average_probs needs at least one vector"))?;
    let mut acc = vec![0.0; first.len()];
    for (i, p) in crop_probs.iter().enumerate() {
        if p.len() != acc.len() {
            return Err(Error::shape("average_probs", acc.len(), p.len()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!("vector {i} sums to {s}, not 1")));
        }
        for (a, &v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let n = crop_probs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn rows<T: Scalar>(probs: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..probs.shape().n)
        .map(|i| probs.sample(i).iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn predict<T: Scalar>(graph: &NetworkGraph, params: &ParamSet<T>, batch: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
    let input = Tensor::stack(batch)?;
    let acts = forward(graph, params, &input, Mode::Infer, None)?;
    Ok(rows(acts.probs(graph)?))
}

/// Class probabilities per image under the given protocol. Center mode
/// uses `preprocess`; multi-crop mode runs every crop of `plan` and
/// averages, subtracting the mean pixel after cropping.
pub fn predict_dataset<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    dataset: &Dataset,
    mode: EvalMode,
    plan: &CropPlan,
    preprocess: &Preprocess,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let classes = graph.num_classes()?;
    if classes != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "network predicts {classes} classes, dataset has {}",
            dataset.num_classes()
        )));
    }
    let batch_size = batch_size.max(1);
    let mut out = Vec::with_capacity(dataset.len());
    match mode {
        EvalMode::CenterCrop => {
            for start in (0..dataset.len()).step_by(batch_size) {
                let end = (start + batch_size).min(dataset.len());
                let imgs = (start..end)
                    .map(|i| preprocess_center(&dataset.image_tensor::<T>(i), preprocess))
                    .collect::<Result<Vec<_>>>()?;
                out.extend(predict(graph, params, &imgs)?);
            }
        }
        EvalMode::MultiCrop => {
            for i in 0..dataset.len() {
                let mut crops = tta_crops(&dataset.image_tensor::<T>(i), plan)?;
                for c in &mut crops {
                    crate::data::normalize(c, &preprocess.mean, preprocess.scale);
                }
                let mut probs = Vec::with_capacity(crops.len());
                for chunk in crops.chunks(batch_size) {
                    probs.extend(predict(graph, params, chunk)?);
                }
                out.push(average_probs(&probs)?);
            }
        }
    }
    Ok(out)
}

/// Top-1 and top-5 accuracy (top-k capped at the class count).
pub fn evaluate<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    dataset: &Dataset,
    mode: EvalMode,
    plan: &CropPlan,
    preprocess: &Preprocess,
    batch_size: usize,
) -> Result<EvalReport> {
    let probs = predict_dataset(graph, params, dataset, mode, plan, preprocess, batch_size)?;
    report_from_probs(&probs, &dataset.labels().collect::<Vec<_>>(), mode, match mode {
        EvalMode::CenterCrop => 1,
        EvalMode::MultiCrop => plan.total(),
    })
}

pub fn report_from_probs(probs: &[Vec<f64>], labels: &[usize], mode: EvalMode, crops_per_image: usize) -> Result<EvalReport> {
    let classes = probs.first().map_or(1, Vec::len);
    let top1 = topk_accuracy(probs, labels, 1)?;
    let top5 = topk_accuracy(probs, labels, 5.min(classes))?;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (row, &l) in probs.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += in_top_k(row, l, 1) as usize;
    }
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok(EvalReport {
        top1,
        top5,
        num_samples: labels.len(),
        mode,
        crops_per_image,
        per_class_accuracy: Some(per_class),
    })
}

/// One accuracy line: center-crop and multi-crop results for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub network: String,
    pub center: Option<EvalReport>,
    pub multi: Option<EvalReport>,
}

fn pct(r: Option<&EvalReport>, f: impl Fn(&EvalReport) -> f64) -> String {
    r.map_or("-".to_string(), |r| format!("{:.2}%", 100.0 * f(r)))
}

/// Aligned text: network, top-1 (center, multi), top-5 (center, multi).
pub fn accuracy_table(rows: &[AccuracyRow]) -> String {
    let width = rows.iter().map(|r| r.network.len()).max().unwrap_or(0).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} | {:^21} | {:^21}", "", "Top-1", "Top-5");
    let _ = writeln!(
        s,
        "{:<width$} | {:>10} {:>10} | {:>10} {:>10}",
        "network", "center", "multi", "center", "multi"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$} | {:>10} {:>10} | {:>10} {:>10}",
            r.network,
            pct(r.center.as_ref(), |e| e.top1),
            pct(r.multi.as_ref(), |e| e.top1),
            pct(r.center.as_ref(), |e| e.top5),
            pct(r.multi.as_ref(), |e| e.top5),
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
    pub batch_size: usize,
    pub repetitions: usize,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str = "network,batch,reps,forward_ms,backward_ms,total_ms";

    pub fn csv_row(&self, network: &str) -> String {
        format!(
            "{network},{},{},{:.4},{:.4},{:.4}",
            self.batch_size, self.repetitions, self.forward_ms, self.backward_ms, self.total_ms
        )
    }
}

/// Per-phase ratios of a multilevel network's timings over its baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Overhead {
    pub baseline: TimingReport,
    pub candidate: TimingReport,
    pub forward_ratio: f64,
    pub backward_ratio: f64,
    pub total_ratio: f64,
}

const WARMUP: usize = 3;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One timed forward + backward on a deterministic batch, in ms.
struct Timer<'a, T: Scalar> {
    graph: &'a NetworkGraph,
    params: ParamSet<T>,
    input: Tensor<T>,
    labels: Vec<usize>,
}

impl<'a, T: Scalar> Timer<'a, T> {
    fn new(graph: &'a NetworkGraph, params: &ParamSet<T>, batch_size: usize) -> Result<Self> {
        let d = graph.input_dims();
        let shape = crate::Shape::new(batch_size, d.c, d.h, d.w)?;
        let data: Vec<f64> = (0..shape.len()).map(|i| ((i * 37) % 101) as f64 / 101.0 - 0.5).collect();
        let classes = graph.num_classes()?;
        Ok(Timer {
            graph,
            params: params.clone(),
            input: Tensor::from_f64(shape, &data)?,
            labels: (0..batch_size).map(|i| i % classes).collect(),
        })
    }

    fn pass(&mut self, rep: usize) -> Result<(f64, f64)> {
        let t0 = Instant::now();
        let acts = forward(self.graph, &self.params, &self.input, Mode::Train, Some(rep as u64))?;
        let t1 = Instant::now();
        backward(self.graph, &mut self.params, &acts, &self.labels, 0.0)?;
        let t2 = Instant::now();
        self.params.zero_grads();
        Ok(((t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3))
    }
}

fn summarize(fw: &mut [f64], bw: &mut [f64], batch_size: usize) -> TimingReport {
    let (f, b) = (median(fw), median(bw));
    TimingReport {
        forward_ms: f,
        backward_ms: b,
        total_ms: f + b,
        batch_size,
        repetitions: fw.len(),
    }
}

/// Median forward and backward wall-clock per batch over `reps` passes,
/// after three untimed warm-up passes.
pub fn benchmark<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    batch_size: usize,
    reps: usize,
) -> Result<TimingReport> {
    if reps < 10 {
        return Err(Error::invalid(format!("benchmark needs >= 10 repetitions, got {reps}")));
    }
    let mut timer = Timer::new(graph, params, batch_size)?;
    for w in 0..WARMUP {
        timer.pass(w)?;
    }
    let (mut fw, mut bw) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for r in 0..reps {
        let (f, b) = timer.pass(r)?;
        fw.push(f);
        bw.push(b);
    }
    Ok(summarize(&mut fw, &mut bw, batch_size))
}

/// Times two networks with interleaved repetitions so that drift in
/// machine load hits both equally, and reports candidate / baseline.
pub fn benchmark_overhead<T: Scalar>(
    baseline: (&NetworkGraph, &ParamSet<T>),
    candidate: (&NetworkGraph, &ParamSet<T>),
    batch_size: usize,
    reps: usize,
) -> Result<Overhead> {
    if reps < 10 {
        return Err(Error::invalid(format!("benchmark needs >= 10 repetitions, got {reps}")));
    }
    let mut a = Timer::new(baseline.0, baseline.1, batch_size)?;
    let mut b = Timer::new(candidate.0, candidate.1, batch_size)?;
    for w in 0..WARMUP {
        a.pass(w)?;
        b.pass(w)?;
    }
    let mut times = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for r in 0..reps {
        let order: [usize; 2] = if r % 2 == 0 { [0, 1] } else { [1, 0] };
        for which in order {
            let (f, bk) = if which == 0 { a.pass(r)? } else { b.pass(r)? };
            times[which][0].push(f);
            times[which][1].push(bk);
        }
    }
    let [[af, ab], [bf, bb]] = &mut times;
    let base = summarize(af, ab, batch_size);
    let cand = summarize(bf, bb, batch_size);
    Ok(Overhead {
        forward_ratio: cand.forward_ms / base.forward_ms,
        backward_ratio: cand.backward_ms / base.backward_ms,
        total_ratio: cand.total_ms / base.total_ms,
        baseline: base,
        candidate: cand,
    })
}

/// Aligned text: network, forward, backward and total ms per batch.
pub fn timing_table(rows: &[(String, TimingReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} | {:>12} | {:>12} | {:>12}", "network", "Forward", "Backward", "Sum");
    for (name, t) in rows {
        let _ = writeln!(
            s,
            "{:<width$} | {:>9.3} ms | {:>9.3} ms | {:>9.3} ms",
            name, t.forward_ms, t.backward_ms, t.total_ms
        );
    }
    s
}
