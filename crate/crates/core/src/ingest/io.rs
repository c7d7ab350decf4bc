//! Canonical on-disk dataset layout and the binary window cache.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::recording::{resample, SensorRecording};
use super::window::{assign_window_label, make_windows, Window, CHANNELS, WINDOW_LEN, WINDOW_STEP};
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_SIDECAR: &str = "windows.json";
pub const CACHE_DATA: &str = "windows.f32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub body_position: String,
    pub sample_rate_hz: f64,
    pub classes: Vec<String>,
    pub users: Vec<String>,
    /// Per-user CSV path, relative to the manifest's directory.
    pub files: BTreeMap<String, PathBuf>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(dup) = self.classes.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate class name `{dup}`")));
        }
        if self.users.is_empty() {
            return Err(Error::InvalidConfig("manifest lists no users".into()));
        }
        if let Some(u) = self.users.iter().find(|u| !self.files.contains_key(*u)) {
            return Err(Error::InvalidConfig(format!("no file for user `{u}`")));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    ax: f64,
    ay: f64,
    az: f64,
    label: Option<String>,
}

pub fn read_recording_csv(path: &Path, user_id: &str, sample_rate_hz: f64) -> Result<SensorRecording> {
    let file = fs::File::open(path).at(path)?;
    let mut reader = csv::Reader::from_reader(file);
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for row in reader.deserialize() {
        let row: CsvRow = row?;
        times.push(row.t);
        samples.push([row.ax, row.ay, row.az]);
        labels.push(row.label.filter(|l| !l.is_empty()));
    }
    let labels = labels.iter().any(Option::is_some).then_some(labels);
    let rec = SensorRecording {
        user_id: user_id.to_string(),
        sample_rate_hz,
        times,
        samples,
        labels,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_recording_csv(path: &Path, rec: &SensorRecording) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut writer = csv::Writer::from_writer(file);
    for (i, (t, s)) in rec.times.iter().zip(&rec.samples).enumerate() {
        writer.serialize(CsvRow {
            t: *t,
            ax: s[0],
            ay: s[1],
            az: s[2],
            label: rec.labels.as_ref().and_then(|l| l[i].clone()),
        })?;
    }
    writer.flush().at(path)?;
    Ok(())
}

/// Reads a manifest and every user's recording.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<SensorRecording>)> {
    let text = fs::read_to_string(manifest_path).at(manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let classes: HashSet<&str> = manifest.classes.iter().map(String::as_str).collect();
    let mut recs = Vec::with_capacity(manifest.users.len());
    for user in &manifest.users {
        let path = root.join(&manifest.files[user]);
        let rec = read_recording_csv(&path, user, manifest.sample_rate_hz)?;
        if let Some(unknown) = rec.labels.iter().flatten().flatten().find(|l| !classes.contains(l.as_str())) {
            return Err(Error::InvalidRecording(format!(
                "{}: label `{unknown}` is not a manifest class",
                path.display()
            )));
        }
        recs.push(rec);
    }
    Ok((manifest, recs))
}

/// Writes `manifest.json` plus one `<user>.csv` per recording into `dir`.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, recs: &[SensorRecording]) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    for rec in recs {
        let rel = manifest
            .files
            .get(&rec.user_id)
            .ok_or_else(|| Error::InvalidConfig(format!("no file entry for user `{}`", rec.user_id)))?;
        write_recording_csv(&dir.join(rel), rec)?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(manifest)?).at(&path)?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub target_hz: f64,
    pub window_len: usize,
    pub step: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            target_hz: 50.0,
            window_len: WINDOW_LEN,
            step: WINDOW_STEP,
        }
    }
}

/// Every window of one dataset, with its class map.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub dataset_id: String,
    pub body_position: String,
    pub classes: Vec<String>,
    pub window_len: usize,
    pub step: usize,
    pub windows: Vec<Window>,
}

impl WindowedDataset {
    /// Distinct users in first-appearance order.
    pub fn users(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.windows
            .iter()
            .filter(|w| seen.insert(w.user_id.clone()))
            .map(|w| w.user_id.to_string())
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Windows whose user is in `users`, in dataset order.
    pub fn windows_for<S: AsRef<str>>(&self, users: &[S]) -> Vec<Window> {
        let set: BTreeSet<&str> = users.iter().map(AsRef::as_ref).collect();
        self.windows
            .iter()
            .filter(|w| set.contains(w.user_id.as_ref()))
            .cloned()
            .collect()
    }

    pub fn labelled_for<S: AsRef<str>>(&self, users: &[S]) -> Vec<Window> {
        self.windows_for(users).into_iter().filter(|w| w.label.is_some()).collect()
    }

    pub fn save_cache(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let sidecar = CacheSidecar {
            dataset_id: self.dataset_id.clone(),
            body_position: self.body_position.clone(),
            window_len: self.window_len,
            step: self.step,
            count: self.windows.len(),
            classes: self.classes.clone(),
            windows: self
                .windows
                .iter()
                .map(|w| CacheEntry {
                    user: w.user_id.to_string(),
                    label: w.label,
                    start: w.start_index,
                })
                .collect(),
        };
        let path = dir.join(CACHE_SIDECAR);
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).at(&path)?;
        let mut raw = Vec::with_capacity(self.windows.len() * self.window_len * CHANNELS * 4);
        for w in &self.windows {
            for v in w.values() {
                raw.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let path = dir.join(CACHE_DATA);
        fs::write(&path, raw).at(&path)
    }

    pub fn load_cache(dir: &Path) -> Result<Self> {
        let path = dir.join(CACHE_SIDECAR);
        let sidecar: CacheSidecar = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?;
        let path = dir.join(CACHE_DATA);
        let raw = fs::read(&path).at(&path)?;
        let per_window = sidecar.window_len * CHANNELS;
        if raw.len() != sidecar.count * per_window * 4 || sidecar.windows.len() != sidecar.count {
            return Err(Error::CorruptArchive {
                path,
                reason: format!("expected {} windows of {} floats", sidecar.count, per_window),
            });
        }
        let dataset: Arc<str> = Arc::from(sidecar.dataset_id.as_str());
        let mut users: BTreeMap<String, Arc<str>> = BTreeMap::new();
        let windows = sidecar
            .windows
            .iter()
            .zip(raw.chunks_exact(per_window * 4))
            .map(|(e, bytes)| {
                let values = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect();
                let user = users.entry(e.user.clone()).or_insert_with(|| Arc::from(e.user.as_str())).clone();
                Window::new(values, e.label, user, dataset.clone(), e.start)
            })
            .collect();
        Ok(Self {
            dataset_id: sidecar.dataset_id,
            body_position: sidecar.body_position,
            classes: sidecar.classes,
            window_len: sidecar.window_len,
            step: sidecar.step,
            windows,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    dataset_id: String,
    body_position: String,
    window_len: usize,
    step: usize,
    count: usize,
    classes: Vec<String>,
    windows: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    user: String,
    label: Option<usize>,
    start: usize,
}

/// Resample, window and label already-loaded recordings.
pub fn ingest_recordings(manifest: &DatasetManifest, recs: &[SensorRecording], opts: &IngestOptions) -> Result<WindowedDataset> {
    let mut windows = Vec::new();
    for rec in recs {
        let rec = resample(rec, opts.target_hz)?;
        for w in make_windows(&rec, &manifest.name, opts.window_len, opts.step) {
            windows.push(assign_window_label(&rec, &w, &manifest.classes));
        }
    }
    Ok(WindowedDataset {
        dataset_id: manifest.name.clone(),
        body_position: manifest.body_position.clone(),
        classes: manifest.classes.clone(),
        window_len: opts.window_len,
        step: opts.step,
        windows,
    })
}

pub fn ingest(manifest_path: &Path, opts: &IngestOptions) -> Result<WindowedDataset> {
    let (manifest, recs) = load_dataset(manifest_path)?;
    ingest_recordings(&manifest, &recs, opts)
}
