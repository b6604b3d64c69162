//! Directory watch: a scanner feeds region tiles to per-region workers and a
//! single writer appends finished frames to the alert log and the ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime};

use surfwatch::image::ImageTensor;
use surfwatch::model::Ganomaly;
use surfwatch::postprocess::{detect as detect_one, PostprocessConfig};
use surfwatch::preprocess::list_images;

use super::{load_frame_tiles, load_region_model, region_postprocess, FrameReport};
use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::layout;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WatchStats {
    /// Frames whose region reports were all written.
    pub frames: usize,
    pub reports: usize,
    /// Reports with `anomaly_present`.
    pub alerts: usize,
    /// Files that could not be read.
    pub skipped: usize,
}

struct Job {
    file: String,
    region: usize,
    tiles: Arc<Vec<ImageTensor>>,
}

struct Done {
    file: String,
    region: usize,
    report: Result<FrameReport, String>,
}

fn load_ledger(path: &Path) -> CliResult<BTreeSet<String>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::at(path, e))
}

fn save_ledger(path: &Path, ledger: &BTreeSet<String>) -> CliResult<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(ledger)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn worker(models: Vec<(usize, Ganomaly, PostprocessConfig)>, jobs: Receiver<Job>, done: Sender<Done>) {
    let mut models: HashMap<usize, (Ganomaly, PostprocessConfig)> = models.into_iter().map(|(r, m, p)| (r, (m, p))).collect();
    for job in jobs {
        let Some((model, pp)) = models.get_mut(&job.region) else {
            continue;
        };
        let report = detect_one(&job.tiles[job.region], model, pp)
            .map(|r| FrameReport {
                file: job.file.clone(),
                region: job.region,
                summary: r.summary(),
            })
            .map_err(|e| e.to_string());
        if done
            .send(Done {
                file: job.file,
                region: job.region,
                report,
            })
            .is_err()
        {
            break;
        }
    }
}

fn writer(
    done: Receiver<Done>,
    regions: usize,
    log_path: PathBuf,
    ledger_path: PathBuf,
    mut ledger: BTreeSet<String>,
) -> CliResult<WatchStats> {
    let mut stats = WatchStats::default();
    let mut pending: HashMap<String, BTreeMap<usize, Result<FrameReport, String>>> = HashMap::new();
    for d in done {
        let slot = pending.entry(d.file.clone()).or_default();
        slot.insert(d.region, d.report);
        if slot.len() < regions {
            continue;
        }
        let finished = pending.remove(&d.file).unwrap_or_default();
        let mut log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut lines = String::new();
        for (region, r) in finished {
            match r {
                Ok(report) => {
                    stats.reports += 1;
                    if report.summary.anomaly_present {
                        stats.alerts += 1;
                        log::warn!("anomaly in {} region {region}", report.file);
                    }
                    lines.push_str(&serde_json::to_string(&report)?);
                    lines.push('\n');
                }
                Err(e) => log::error!("{} region {region}: {e}", d.file),
            }
        }
        log.write_all(lines.as_bytes())?;
        log.sync_data()?;
        ledger.insert(d.file);
        save_ledger(&ledger_path, &ledger)?;
        stats.frames += 1;
    }
    Ok(stats)
}

type FileStamp = (Option<SystemTime>, u64);

fn stamp(path: &Path) -> FileStamp {
    fs::metadata(path).map(|m| (m.modified().ok(), m.len())).unwrap_or((None, 0))
}

/// Watches `dir`. With `once`, processes the current contents and returns;
/// otherwise polls every `watch.poll_secs` until `max_polls` scans (forever when `None`).
pub fn watch(cfg: &AppConfig, dir: &Path, once: bool, max_polls: Option<usize>) -> CliResult<WatchStats> {
    let regions = cfg.region.region_count();
    let n_workers = cfg.watch.workers.min(regions).max(1);
    let mut assigned: Vec<Vec<(usize, Ganomaly, PostprocessConfig)>> = (0..n_workers).map(|_| Vec::new()).collect();
    for r in 0..regions {
        assigned[r % n_workers].push((r, load_region_model(cfg, r)?, region_postprocess(cfg, r)?));
    }
    fs::create_dir_all(&cfg.paths.output_dir)?;
    let ledger_path = layout::watch_ledger(cfg);
    let ledger = load_ledger(&ledger_path)?;
    let mut seen = ledger.clone();

    let (done_tx, done_rx) = channel::<Done>();
    let log_path = layout::alert_log(cfg);
    let writer_handle = {
        let lp = ledger_path.clone();
        thread::spawn(move || writer(done_rx, regions, log_path, lp, ledger))
    };
    let mut senders = Vec::with_capacity(n_workers);
    let mut workers = Vec::with_capacity(n_workers);
    for models in assigned {
        let (tx, rx) = channel::<Job>();
        let d = done_tx.clone();
        senders.push(tx);
        workers.push(thread::spawn(move || worker(models, rx, d)));
    }
    drop(done_tx);

    let mut failed: HashMap<String, FileStamp> = HashMap::new();
    let mut skipped = 0usize;
    let limit = if once { Some(1) } else { max_polls };
    let mut polls = 0usize;
    loop {
        let names = match list_images(dir) {
            Ok(n) => n,
            Err(e) => {
                log::error!("cannot scan {}: {e}", dir.display());
                Vec::new()
            }
        };
        for name in names {
            if seen.contains(&name) {
                continue;
            }
            let path = dir.join(&name);
            let st = stamp(&path);
            if failed.get(&name) == Some(&st) {
                continue;
            }
            match load_frame_tiles(cfg, &path) {
                Ok(tiles) => {
                    failed.remove(&name);
                    let tiles = Arc::new(tiles);
                    for r in 0..regions {
                        let job = Job {
                            file: name.clone(),
                            region: r,
                            tiles: Arc::clone(&tiles),
                        };
                        if senders[r % n_workers].send(job).is_err() {
                            return Err(CliError::Failed("watch worker stopped".into()));
                        }
                    }
                    seen.insert(name);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    failed.insert(name, st);
                    skipped += 1;
                }
            }
        }
        polls += 1;
        if limit.is_some_and(|l| polls >= l) {
            break;
        }
        thread::sleep(Duration::from_secs_f64(cfg.watch.poll_secs));
    }

    drop(senders);
    for w in workers {
        w.join().map_err(|_| CliError::Failed("watch worker panicked".into()))?;
    }
    let mut stats = writer_handle
        .join()
        .map_err(|_| CliError::Failed("alert writer panicked".into()))??;
    stats.skipped = skipped;
    Ok(stats)
}
