//! Confusion matrices, F1 reports and the window-size sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{run_training, NetworkConfig, QNetwork, TrainerConfig};
use crate::corpus::{Conversation, Splits};
use crate::dk::{build_dk, DkTable};
use crate::error::{Error, Result};
use crate::inference::{run_episode, Model, Revision};
use crate::labels::{EmotionLabel, N_CLASSES};
use crate::rng::SeedStreams;

/// Rows are gold labels, columns predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: usize, pred: usize) -> Result<()> {
        for l in [gold, pred] {
            if l >= N_CLASSES {
                return Err(Error::InvalidLabel(l as i64));
            }
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("gold\\pred");
        for l in EmotionLabel::ALL {
            write!(s, ",{}", l.name()).unwrap();
        }
        s.push('\n');
        for (l, row) in EmotionLabel::ALL.iter().zip(&self.counts) {
            s.push_str(l.name());
            for c in row {
                write!(s, ",{c}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Row-normalised shades, one character per cell.
    pub fn heatmap(&self) -> String {
        const SHADES: [char; 5] = [' ', '.', ':', '*', '#'];
        let mut s = String::new();
        for (l, row) in EmotionLabel::ALL.iter().zip(&self.counts) {
            let total: u64 = row.iter().sum();
            write!(s, "{:>10} |", l.name()).unwrap();
            for &c in row {
                let frac = if total == 0 { 0.0 } else { c as f64 / total as f64 };
                let idx = ((frac * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1);
                write!(s, " {} ", SHADES[idx]).unwrap();
            }
            writeln!(s, "| {total}").unwrap();
        }
        s
    }
}

pub fn confusion(golds: &[usize], preds: &[usize]) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} gold labels vs {} predictions", golds.len(), preds.len()),
        ));
    }
    let mut m = ConfusionMatrix::default();
    for (&g, &p) in golds.iter().zip(preds) {
        m.add(g, p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    pub support: [u64; N_CLASSES],
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn f1_report(m: &ConfusionMatrix) -> Result<F1Report> {
    let n = m.total();
    if n == 0 {
        return Err(Error::Config("empty confusion matrix".into()));
    }
    let mut r = F1Report {
        precision: [0.0; N_CLASSES],
        recall: [0.0; N_CLASSES],
        f1: [0.0; N_CLASSES],
        support: [0; N_CLASSES],
        weighted_f1: 0.0,
        macro_f1: 0.0,
        accuracy: m.accuracy(),
    };
    for e in 0..N_CLASSES {
        let tp = m.counts[e][e] as f64;
        let support: u64 = m.counts[e].iter().sum();
        let predicted: u64 = (0..N_CLASSES).map(|g| m.counts[g][e]).sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let rc = if support == 0 { 0.0 } else { tp / support as f64 };
        r.precision[e] = p;
        r.recall[e] = rc;
        r.f1[e] = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        r.support[e] = support;
        r.weighted_f1 += support as f64 / n as f64 * r.f1[e];
    }
    r.macro_f1 = r.f1.iter().sum::<f64>() / N_CLASSES as f64;
    Ok(r)
}

/// Outcome of running the gold-initialised protocol over a set of conversations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// After DK revision.
    pub revised: ConfusionMatrix,
    /// Argmax of the model scores alone.
    pub raw: ConfusionMatrix,
    /// Predicted utterances (each conversation's first `w` are given, not scored).
    pub scored: u64,
    /// All utterances of the evaluated conversations, including the given ones.
    pub total_utterances: u64,
    pub skipped_conversations: Vec<String>,
}

impl Evaluation {
    /// Accuracy with the given first-`w` utterances counted as correct.
    pub fn revised_accuracy_all(&self) -> f64 {
        let given = self.total_utterances - self.scored;
        (self.revised.correct() + given) as f64 / self.total_utterances.max(1) as f64
    }
}

pub fn evaluate(model: &Model, table: &DkTable, convs: &[Conversation], revision: Revision) -> Result<Evaluation> {
    let mut ev = Evaluation {
        revised: ConfusionMatrix::default(),
        raw: ConfusionMatrix::default(),
        scored: 0,
        total_utterances: 0,
        skipped_conversations: Vec::new(),
    };
    let w = model.window();
    for conv in convs {
        if conv.len() <= w {
            log::warn!(
                "skipping conversation {}: {} utterances, window {w}",
                conv.id,
                conv.len()
            );
            ev.skipped_conversations.push(conv.id.clone());
            continue;
        }
        let preds = run_episode(model, table, conv, revision)?;
        for (u, p) in conv.utterances[w..].iter().zip(&preds) {
            let gold = u.label.ok_or_else(|| Error::InvalidConversation {
                conversation: conv.id.clone(),
                msg: format!("turn {} has no label", u.turn_index),
            })?;
            ev.revised.add(gold.index(), p.label.index())?;
            ev.raw.add(gold.index(), p.raw_label().index())?;
        }
        ev.scored += preds.len() as u64;
        ev.total_utterances += conv.len() as u64;
    }
    Ok(ev)
}

/// Mean (and across-seed standard deviation) of overall and per-class F1 for one window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub overall: f64,
    pub per_class: [f64; N_CLASSES],
    pub overall_std: f64,
    pub per_class_std: [f64; N_CLASSES],
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
    pub windows: Vec<usize>,
    /// One training run per seed and window.
    pub seeds: Vec<u64>,
    pub revision: Revision,
    /// Also count validation conversations when building the DK table.
    pub dk_include_valid: bool,
    pub threads: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sweep_job(splits: &Splits, cfg: &SweepConfig, window: usize, seed: u64) -> Result<F1Report> {
    let net_cfg = NetworkConfig { window, ..cfg.network };
    let net = QNetwork::new(net_cfg)?;
    let run = run_training(&net, &splits.train, &cfg.trainer, &SeedStreams::new(seed))?;
    let model = Model::new(net_cfg, run.params)?;
    let table = if cfg.dk_include_valid {
        let mut both = splits.train.clone();
        both.extend(splits.valid.iter().cloned());
        build_dk(&both, window)?
    } else {
        build_dk(&splits.train, window)?
    };
    let ev = evaluate(&model, &table, &splits.test, cfg.revision)?;
    f1_report(&ev.revised)
}

/// Trains and evaluates every `(window, seed)` pair; jobs are independent and
/// run on up to `cfg.threads` worker threads. Rows come back in `windows` order.
pub fn sweep_windows(splits: &Splits, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.windows.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one window and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = cfg
        .windows
        .iter()
        .flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<F1Report>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    let threads = cfg.threads.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(w, seed)) = jobs.get(i) else { break };
                let r = sweep_job(splits, cfg, w, seed);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().unwrap();
    let mut reports = Vec::with_capacity(jobs.len());
    for r in results {
        reports.push(r.expect("every job ran")?);
    }
    Ok(cfg
        .windows
        .iter()
        .enumerate()
        .map(|(wi, &window)| {
            let runs = &reports[wi * cfg.seeds.len()..(wi + 1) * cfg.seeds.len()];
            let (overall, overall_std) = mean_std(&runs.iter().map(|r| r.weighted_f1).collect::<Vec<_>>());
            let mut per_class = [0.0; N_CLASSES];
            let mut per_class_std = [0.0; N_CLASSES];
            for e in 0..N_CLASSES {
                (per_class[e], per_class_std[e]) = mean_std(&runs.iter().map(|r| r.f1[e]).collect::<Vec<_>>());
            }
            SweepRow {
                window,
                overall,
                per_class,
                overall_std,
                per_class_std,
                runs: runs.len(),
            }
        })
        .collect())
}

fn sweep_header() -> String {
    let mut s = String::from("w,overall");
    for l in EmotionLabel::ALL {
        s.push(',');
        s.push_str(l.name());
    }
    s
}

fn sweep_csv(rows: &[SweepRow], std: bool) -> String {
    let mut s = sweep_header();
    s.push('\n');
    for r in rows {
        let (overall, classes) = if std {
            (r.overall_std, r.per_class_std)
        } else {
            (r.overall, r.per_class)
        };
        write!(s, "{},{:.6}", r.window, overall).unwrap();
        for v in classes {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Means as a Table-1-shaped CSV.
pub fn sweep_means_csv(rows: &[SweepRow]) -> String {
    sweep_csv(rows, false)
}

/// Across-seed standard deviations in the same shape.
pub fn sweep_std_csv(rows: &[SweepRow]) -> String {
    sweep_csv(rows, true)
}

/// Companion path for the standard-deviation table: `<out>.std.csv`.
pub fn std_path(out: &Path) -> PathBuf {
    let stem = out.with_extension("");
    let mut s = stem.into_os_string();
    s.push(".std.csv");
    PathBuf::from(s)
}

pub fn write_sweep(out: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(out, sweep_means_csv(rows)).map_err(|e| Error::io(out, e))?;
    let sp = std_path(out);
    std::fs::write(&sp, sweep_std_csv(rows)).map_err(|e| Error::io(&sp, e))
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::rng::Rng;

    #[test]
    fn hand_counts() {
        let m = confusion(&[0, 1], &[1, 1]).unwrap();
        assert_eq!(m.counts[0][1], 1);
        assert_eq!(m.counts[1][1], 1);
        assert_eq!(m.total(), 2);
        assert!(confusion(&[0], &[]).is_err());
        assert!(confusion(&[6], &[0]).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let m = confusion(&labels, &labels).unwrap();
        let r = f1_report(&m).unwrap();
        assert!(r.f1.iter().all(|&f| f == 1.0));
        assert!((r.weighted_f1 - 1.0).abs() < 1e-12);
        assert!(f1_report(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = confusion(&[0, 0, 1], &[0, 0, 1]).unwrap();
        let r = f1_report(&m).unwrap();
        assert_eq!(r.f1[5], 0.0);
        assert_eq!(r.support[5], 0);
        assert!((r.weighted_f1 - 1.0).abs() < 1e-12);
        assert!((r.macro_f1 - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_matrix_against_hand_values() {
        let mut m = ConfusionMatrix::default();
        m.counts = [
            [5, 1, 0, 0, 0, 0],
            [2, 3, 0, 0, 0, 1],
            [0, 0, 4, 0, 0, 0],
            [0, 0, 0, 0, 0, 0],
            [1, 0, 0, 0, 2, 0],
            [0, 0, 0, 0, 0, 0],
        ];
        let r = f1_report(&m).unwrap();
        // happy: P = 5/8, R = 5/6; sad: P = 3/4, R = 1/2; excited: P = 1, R = 2/3
        let expect = |p: f64, rc: f64| 2.0 * p * rc / (p + rc);
        assert!((r.f1[0] - expect(5.0 / 8.0, 5.0 / 6.0)).abs() < 1e-12);
        assert!((r.f1[1] - expect(0.75, 0.5)).abs() < 1e-12);
        assert_eq!(r.f1[2], 1.0);
        assert!((r.f1[4] - expect(1.0, 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(r.f1[5], 0.0);
        let weighted = (6.0 * r.f1[0] + 6.0 * r.f1[1] + 4.0 + 3.0 * r.f1[4]) / 19.0;
        assert!((r.weighted_f1 - weighted).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_total() {
        let mut rng = Rng::seed_from_u64(0);
        let g: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..6)).collect();
        let p: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..6)).collect();
        assert_eq!(confusion(&g, &p).unwrap().total(), 10_000);
    }

    #[test]
    fn csv_shapes() {
        let rows = vec![SweepRow {
            window: 3,
            overall: 0.5,
            per_class: [0.1; 6],
            overall_std: 0.01,
            per_class_std: [0.0; 6],
            runs: 2,
        }];
        let csv = sweep_means_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "w,overall,happy,sad,neutral,angry,excited,frustrated");
        assert_eq!(lines[1].split(',').count(), 8);
        assert_eq!(std_path(Path::new("out/table.csv")), PathBuf::from("out/table.std.csv"));
        let m = confusion(&[0, 1], &[1, 1]).unwrap();
        assert_eq!(m.to_csv().lines().count(), 7);
        assert_eq!(m.heatmap().lines().count(), 6);
    }
}
