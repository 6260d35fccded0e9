//! On-disk embedding banks: per-layer frozen-encoder activations plus labels.
//!
//! A bank is a directory holding `manifest.json`, one `layer_<i>.bin` per
//! layer, and `labels.bin`. Binary payloads are row-major little-endian f32,
//! samples concatenated in index order, no padding, no header. Single-label
//! labels are little-endian u32; multi-label labels are one byte per class.

use std::fs::{self, File};
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Sequence,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// [time, feature] for sequence layers, [channel, height, width] for conv.
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let arity = match self.kind {
            LayerKind::Sequence => 2,
            LayerKind::Conv => 3,
        };
        if self.shape.len() != arity {
            return Err(Error::InvalidSpec(format!(
                "layer '{}': {:?} kind needs {} dims, got {:?}",
                self.name, self.kind, arity, self.shape
            )));
        }
        if self.shape.iter().any(|&d| d < 1) {
            return Err(Error::InvalidSpec(format!(
                "layer '{}': all dims must be >= 1, got {:?}",
                self.name, self.shape
            )));
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// (time, feature) after conv flattening: sequence layers are (d1, d2);
    /// conv layers use width as time and channel x height as feature.
    pub fn unified_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Sequence => (self.shape[0], self.shape[1]),
            LayerKind::Conv => (self.shape[2], self.shape[0] * self.shape[1]),
        }
    }
}

pub const BANK_VERSION: u32 = 1;
pub const BANK_DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub version: u32,
    pub num_samples: usize,
    pub layers: Vec<LayerSpec>,
    pub task: TaskKind,
    pub num_classes: usize,
    pub dtype: String,
}

impl BankManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != BANK_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported bank version {}",
                self.version
            )));
        }
        if self.dtype != BANK_DTYPE {
            return Err(Error::InvalidSpec(format!("unsupported dtype {}", self.dtype)));
        }
        if self.num_samples < 1 {
            return Err(Error::InvalidSpec("num_samples must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("bank needs at least one layer".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.layers.len() {
            return Err(Error::InvalidSpec("duplicate layer names".into()));
        }
        Ok(())
    }

    pub fn layer_file(&self, index: usize) -> String {
        format!("layer_{index}.bin")
    }

    pub fn layer_byte_len(&self, index: usize) -> u64 {
        (self.num_samples * self.layers[index].numel() * 4) as u64
    }

    pub fn labels_byte_len(&self) -> u64 {
        match self.task {
            TaskKind::SingleLabel => (self.num_samples * 4) as u64,
            TaskKind::MultiLabel => (self.num_samples * self.num_classes) as u64,
        }
    }
}

/// Labels for a whole bank, one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class index per sample.
    Single(Vec<u32>),
    /// One 0/1 byte per class per sample.
    Multi(Vec<Vec<u8>>),
}

// ---------------------------------------------------------------------------
// writer
// ---------------------------------------------------------------------------

/// Writes a bank directory. `samples[i][l]` holds sample i's activation at
/// layer l, shaped per the manifest.
pub fn write_bank(
    manifest: &BankManifest,
    samples: &[Vec<Tensor>],
    labels: &Labels,
    path: &Path,
) -> Result<()> {
    manifest.validate()?;
    if samples.len() != manifest.num_samples {
        return Err(Error::ShapeMismatch {
            op: "write_bank",
            detail: format!(
                "{} samples given, manifest says {}",
                samples.len(),
                manifest.num_samples
            ),
        });
    }
    for (i, sample) in samples.iter().enumerate() {
        if sample.len() != manifest.layers.len() {
            return Err(Error::ShapeMismatch {
                op: "write_bank",
                detail: format!("sample {i} has {} layers", sample.len()),
            });
        }
        for (l, t) in sample.iter().enumerate() {
            if t.shape() != manifest.layers[l].shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "write_bank",
                    detail: format!(
                        "sample {i} layer {l}: {:?} vs manifest {:?}",
                        t.shape(),
                        manifest.layers[l].shape
                    ),
                });
            }
            t.check_finite("write_bank")?;
        }
    }

    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let manifest_path = path.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    for l in 0..manifest.layers.len() {
        let mut bytes = Vec::with_capacity(manifest.layer_byte_len(l) as usize);
        for sample in samples {
            for &v in sample[l].data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let file = path.join(manifest.layer_file(l));
        fs::write(&file, bytes).map_err(|e| Error::io(&file, e))?;
    }

    let labels_path = path.join("labels.bin");
    let bytes = match (labels, manifest.task) {
        (Labels::Single(xs), TaskKind::SingleLabel) => {
            if xs.len() != manifest.num_samples {
                return Err(Error::ShapeMismatch {
                    op: "write_bank",
                    detail: "label count != num_samples".into(),
                });
            }
            if let Some(&bad) = xs.iter().find(|&&c| c as usize >= manifest.num_classes) {
                return Err(Error::OutOfRange {
                    op: "write_bank",
                    detail: format!("label {bad} >= num_classes {}", manifest.num_classes),
                });
            }
            xs.iter().flat_map(|c| c.to_le_bytes()).collect::<Vec<u8>>()
        }
        (Labels::Multi(rows), TaskKind::MultiLabel) => {
            if rows.len() != manifest.num_samples
                || rows.iter().any(|r| r.len() != manifest.num_classes)
            {
                return Err(Error::ShapeMismatch {
                    op: "write_bank",
                    detail: "multi-label rows must be num_samples x num_classes".into(),
                });
            }
            if rows.iter().flatten().any(|&b| b > 1) {
                return Err(Error::OutOfRange {
                    op: "write_bank",
                    detail: "multi-label bytes must be 0 or 1".into(),
                });
            }
            rows.concat()
        }
        _ => {
            return Err(Error::ShapeMismatch {
                op: "write_bank",
                detail: "label kind does not match manifest task".into(),
            })
        }
    };
    fs::write(&labels_path, bytes).map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// reader
// ---------------------------------------------------------------------------

/// Open bank with lazy per-sample, per-layer tensor access. Values are
/// upcast to f64 on read.
pub struct EmbeddingBank {
    manifest: BankManifest,
    dir: PathBuf,
    layer_files: Vec<File>,
    labels: Labels,
}

pub fn read_bank(path: &Path) -> Result<EmbeddingBank> {
    EmbeddingBank::open(path)
}

impl EmbeddingBank {
    pub fn open(path: &Path) -> Result<EmbeddingBank> {
        let manifest_path = path.join("manifest.json");
        let mut raw = String::new();
        File::open(&manifest_path)
            .and_then(|mut f| f.read_to_string(&mut raw))
            .map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: BankManifest =
            serde_json::from_str(&raw).map_err(|e| Error::InvalidManifest {
                path: manifest_path.clone(),
                detail: e.to_string(),
            })?;
        manifest.validate().map_err(|e| Error::InvalidManifest {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;

        let mut layer_files = Vec::new();
        for l in 0..manifest.layers.len() {
            let p = path.join(manifest.layer_file(l));
            let file = File::open(&p).map_err(|e| Error::io(&p, e))?;
            let actual = file.metadata().map_err(|e| Error::io(&p, e))?.len();
            let expected = manifest.layer_byte_len(l);
            if actual != expected {
                return Err(Error::SizeMismatch {
                    path: p,
                    expected,
                    actual,
                });
            }
            layer_files.push(file);
        }

        let labels_path = path.join("labels.bin");
        let mut bytes = Vec::new();
        File::open(&labels_path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&labels_path, e))?;
        let expected = manifest.labels_byte_len();
        if bytes.len() as u64 != expected {
            return Err(Error::SizeMismatch {
                path: labels_path,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let labels = match manifest.task {
            TaskKind::SingleLabel => {
                let mut xs = Vec::with_capacity(manifest.num_samples);
                for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                    let v = u32::from_le_bytes(chunk.try_into().unwrap());
                    if v as usize >= manifest.num_classes {
                        return Err(Error::LabelOutOfRange {
                            path: labels_path,
                            sample: i,
                            label: v,
                            num_classes: manifest.num_classes,
                        });
                    }
                    xs.push(v);
                }
                Labels::Single(xs)
            }
            TaskKind::MultiLabel => {
                if let Some(pos) = bytes.iter().position(|&b| b > 1) {
                    return Err(Error::LabelOutOfRange {
                        path: labels_path,
                        sample: pos / manifest.num_classes,
                        label: bytes[pos] as u32,
                        num_classes: manifest.num_classes,
                    });
                }
                Labels::Multi(
                    bytes
                        .chunks_exact(manifest.num_classes)
                        .map(|r| r.to_vec())
                        .collect(),
                )
            }
        };

        Ok(EmbeddingBank {
            manifest,
            dir: path.to_path_buf(),
            layer_files,
            labels,
        })
    }

    pub fn manifest(&self) -> &BankManifest {
        &self.manifest
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Reads one sample's activation at one layer.
    pub fn get(&self, sample: usize, layer: usize) -> Result<Tensor> {
        if sample >= self.manifest.num_samples || layer >= self.manifest.layers.len() {
            return Err(Error::OutOfRange {
                op: "bank.get",
                detail: format!("sample {sample}, layer {layer}"),
            });
        }
        let spec = &self.manifest.layers[layer];
        let numel = spec.numel();
        let offset = (sample * numel * 4) as u64;
        let mut bytes = vec![0u8; numel * 4];
        let p = self.dir.join(self.manifest.layer_file(layer));
        self.layer_files[layer]
            .read_exact_at(&mut bytes, offset)
            .map_err(|e| Error::io(&p, e))?;
        let mut data = Vec::with_capacity(numel);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::NanPayload {
                    path: p,
                    offset: offset + (k * 4) as u64,
                });
            }
            data.push(v);
        }
        Tensor::from_vec(&spec.shape, data)
    }

    /// All layers of one sample, in manifest order.
    pub fn get_sample(&self, sample: usize) -> Result<Vec<Tensor>> {
        (0..self.manifest.layers.len())
            .map(|l| self.get(sample, l))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// validator
// ---------------------------------------------------------------------------

/// Checks every bank invariant; the report is empty iff the bank is valid.
pub fn validate_bank(path: &Path) -> Vec<String> {
    let mut report = Vec::new();
    let manifest_path = path.join("manifest.json");
    let raw = match fs::read_to_string(&manifest_path) {
        Ok(s) => s,
        Err(e) => {
            report.push(format!("{}: unreadable: {e}", manifest_path.display()));
            return report;
        }
    };
    let manifest: BankManifest = match serde_json::from_str(&raw) {
        Ok(m) => m,
        Err(e) => {
            report.push(format!("{}: invalid manifest: {e}", manifest_path.display()));
            return report;
        }
    };
    if let Err(e) = manifest.validate() {
        report.push(format!("{}: {e}", manifest_path.display()));
        return report;
    }

    for l in 0..manifest.layers.len() {
        let p = path.join(manifest.layer_file(l));
        let bytes = match fs::read(&p) {
            Ok(b) => b,
            Err(e) => {
                report.push(format!("{}: unreadable: {e}", p.display()));
                continue;
            }
        };
        let expected = manifest.layer_byte_len(l);
        if bytes.len() as u64 != expected {
            report.push(format!(
                "{}: size mismatch: expected {expected} bytes, found {}",
                p.display(),
                bytes.len()
            ));
            continue;
        }
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                report.push(format!(
                    "{}: non-finite value at byte offset {}",
                    p.display(),
                    k * 4
                ));
            }
        }
    }

    let labels_path = path.join("labels.bin");
    match fs::read(&labels_path) {
        Err(e) => report.push(format!("{}: unreadable: {e}", labels_path.display())),
        Ok(bytes) => {
            let expected = manifest.labels_byte_len();
            if bytes.len() as u64 != expected {
                report.push(format!(
                    "{}: size mismatch: expected {expected} bytes, found {}",
                    labels_path.display(),
                    bytes.len()
                ));
            } else {
                match manifest.task {
                    TaskKind::SingleLabel => {
                        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                            let v = u32::from_le_bytes(chunk.try_into().unwrap());
                            if v as usize >= manifest.num_classes {
                                report.push(format!(
                                    "{}: sample {i} label {v} >= num_classes {}",
                                    labels_path.display(),
                                    manifest.num_classes
                                ));
                            }
                        }
                    }
                    TaskKind::MultiLabel => {
                        for (k, &b) in bytes.iter().enumerate() {
                            if b > 1 {
                                report.push(format!(
                                    "{}: byte {k} is {b}, expected 0 or 1",
                                    labels_path.display()
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

/// Spec for a planted-signal synthetic bank: i.i.d. standard normal noise
/// everywhere, plus a per-class prototype added to one layer inside one
/// time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub layers: Vec<LayerSpec>,
    pub num_samples: usize,
    pub num_classes: usize,
    pub task: TaskKind,
    pub informative_layer: usize,
    /// [t0, t1) on the informative layer's unified time axis (width for conv).
    pub time_window: [usize; 2],
    pub snr: f64,
    pub seed: u64,
    /// Optional separate seed for the noise stream. Two specs sharing `seed`
    /// but differing here produce banks with identical class prototypes and
    /// independent noise — a matched train/test pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let manifest = self.manifest();
        manifest.validate()?;
        if self.informative_layer >= self.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "informative_layer {} out of range (L = {})",
                self.informative_layer,
                self.layers.len()
            )));
        }
        let (t, _) = self.layers[self.informative_layer].unified_shape();
        let [t0, t1] = self.time_window;
        if t0 >= t1 || t1 > t {
            return Err(Error::InvalidSpec(format!(
                "time_window [{t0}, {t1}) invalid for time axis {t}"
            )));
        }
        if self.snr < 0.0 || !self.snr.is_finite() {
            return Err(Error::InvalidSpec(format!("snr {} must be >= 0", self.snr)));
        }
        Ok(())
    }

    pub fn manifest(&self) -> BankManifest {
        BankManifest {
            version: BANK_VERSION,
            num_samples: self.num_samples,
            layers: self.layers.clone(),
            task: self.task,
            num_classes: self.num_classes,
            dtype: BANK_DTYPE.into(),
        }
    }
}

/// Generates and writes a planted-signal bank.
///
/// Draw order (fixed for determinism): unit-norm class prototypes first,
/// in class order; then noise, iterating samples in index order and layers
/// in manifest order, elements row-major. Classes are assigned round-robin
/// (sample i gets class i mod C), so classes are balanced; multi-label
/// banks mark exactly the planted class positive.
pub fn synth_bank(spec: &SynthSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    let manifest = spec.manifest();
    let mut rng = Rng::from_seed(spec.seed);

    let proto_dim = spec.layers[spec.informative_layer].unified_shape().1;
    let mut prototypes = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let mut v: Vec<f64> = (0..proto_dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        prototypes.push(v);
    }

    let mut rng = match spec.noise_seed {
        Some(s) => Rng::from_seed(s),
        None => rng,
    };

    let classes: Vec<usize> = (0..spec.num_samples).map(|i| i % spec.num_classes).collect();

    let mut samples: Vec<Vec<Tensor>> = Vec::with_capacity(spec.num_samples);
    for &class in &classes {
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, layer) in spec.layers.iter().enumerate() {
            let mut t = Tensor::zeros(&layer.shape);
            for v in t.data_mut() {
                *v = rng.standard_normal();
            }
            if l == spec.informative_layer && spec.snr > 0.0 {
                plant_signal(&mut t, layer, &prototypes[class], spec.snr, spec.time_window);
            }
            layers.push(t);
        }
        samples.push(layers);
    }

    let labels = match spec.task {
        TaskKind::SingleLabel => Labels::Single(classes.iter().map(|&c| c as u32).collect()),
        TaskKind::MultiLabel => Labels::Multi(
            classes
                .iter()
                .map(|&c| {
                    let mut row = vec![0u8; spec.num_classes];
                    row[c] = 1;
                    row
                })
                .collect(),
        ),
    };

    write_bank(&manifest, &samples, &labels, path)
}

/// Adds `snr * proto` to every time step inside the window, on the layer's
/// unified (time, feature) view.
fn plant_signal(t: &mut Tensor, layer: &LayerSpec, proto: &[f64], snr: f64, window: [usize; 2]) {
    match layer.kind {
        LayerKind::Sequence => {
            let f = layer.shape[1];
            for row in window[0]..window[1] {
                for j in 0..f {
                    t.data_mut()[row * f + j] += snr * proto[j];
                }
            }
        }
        LayerKind::Conv => {
            // time = width; feature index = channel * height + h.
            let (d2, d3) = (layer.shape[1], layer.shape[2]);
            for c in 0..layer.shape[0] {
                for h in 0..d2 {
                    let add = snr * proto[c * d2 + h];
                    for w in window[0]..window[1] {
                        t.data_mut()[(c * d2 + h) * d3 + w] += add;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn seq_layer(name: &str, t: usize, f: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Sequence,
            shape: vec![t, f],
        }
    }

    fn small_spec() -> SynthSpec {
        SynthSpec {
            layers: vec![seq_layer("l0", 4, 8), seq_layer("l1", 4, 8)],
            num_samples: 6,
            num_classes: 3,
            task: TaskKind::SingleLabel,
            informative_layer: 1,
            time_window: [0, 4],
            snr: 2.0,
            seed: 42,
            noise_seed: None,
        }
    }

    #[test]
    fn layer_file_byte_length() {
        let spec = SynthSpec {
            layers: vec![seq_layer("a", 4, 8)],
            num_samples: 2,
            num_classes: 2,
            task: TaskKind::SingleLabel,
            informative_layer: 0,
            time_window: [0, 4],
            snr: 0.0,
            seed: 1,
            noise_seed: None,
        };
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let len = fs::metadata(dir.path().join("layer_0.bin")).unwrap().len();
        assert_eq!(len, 256); // 2 * 4 * 8 * 4 bytes
        let labels = fs::metadata(dir.path().join("labels.bin")).unwrap().len();
        assert_eq!(labels, 8);
    }

    #[test]
    fn single_label_file_is_4n_bytes() {
        let mut spec = small_spec();
        spec.num_samples = 3;
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join("labels.bin")).unwrap().len(), 12);
    }

    #[test]
    fn write_read_roundtrip_bit_exact() {
        let spec = small_spec();
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let bank = EmbeddingBank::open(dir.path()).unwrap();
        // Re-read raw bytes and compare against tensor values after f32 trip.
        for l in 0..2 {
            let bytes = fs::read(dir.path().join(format!("layer_{l}.bin"))).unwrap();
            for i in 0..spec.num_samples {
                let t = bank.get(i, l).unwrap();
                for (k, &v) in t.data().iter().enumerate() {
                    let off = (i * 32 + k) * 4;
                    let raw = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                    assert_eq!(raw as f64, v);
                }
            }
        }
    }

    #[test]
    fn truncated_layer_file_is_size_error() {
        let spec = small_spec();
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let p = dir.path().join("layer_0.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match EmbeddingBank::open(dir.path()) {
            Err(Error::SizeMismatch { path, .. }) => {
                assert!(path.to_string_lossy().contains("layer_0.bin"));
            }
            Err(other) => panic!("expected size mismatch, got {other:?}"),
            Ok(_) => panic!("expected size mismatch, got a bank"),
        }
    }

    #[test]
    fn out_of_range_label_is_error() {
        let spec = small_spec();
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let p = dir.path().join("labels.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0..4].copy_from_slice(&(spec.num_classes as u32).to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            EmbeddingBank::open(dir.path()),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn get_last_layer_has_manifest_shape() {
        let spec = small_spec();
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let bank = EmbeddingBank::open(dir.path()).unwrap();
        let t = bank.get(0, 1).unwrap();
        assert_eq!(t.shape(), &[4, 8]);
    }

    #[test]
    fn fresh_bank_validates_clean() {
        let dir = tempdir().unwrap();
        synth_bank(&small_spec(), dir.path()).unwrap();
        assert!(validate_bank(dir.path()).is_empty());
    }

    #[test]
    fn appended_byte_is_one_size_violation() {
        let dir = tempdir().unwrap();
        synth_bank(&small_spec(), dir.path()).unwrap();
        let p = dir.path().join("labels.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.push(0);
        fs::write(&p, bytes).unwrap();
        let report = validate_bank(dir.path());
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("size mismatch"));
    }

    #[test]
    fn nan_patch_is_finiteness_violation_with_offset() {
        let dir = tempdir().unwrap();
        synth_bank(&small_spec(), dir.path()).unwrap();
        let p = dir.path().join("layer_0.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let report = validate_bank(dir.path());
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("offset 8"), "{}", report[0]);
        // The lazy reader reports the same offense.
        let bank = EmbeddingBank::open(dir.path()).unwrap();
        assert!(matches!(bank.get(0, 0), Err(Error::NanPayload { offset: 8, .. })));
    }

    #[test]
    fn synth_is_byte_identical_across_runs() {
        let spec = small_spec();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        synth_bank(&spec, d1.path()).unwrap();
        synth_bank(&spec, d2.path()).unwrap();
        for name in ["manifest.json", "layer_0.bin", "layer_1.bin", "labels.bin"] {
            assert_eq!(
                fs::read(d1.path().join(name)).unwrap(),
                fs::read(d2.path().join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn signal_outside_window_is_zero_by_construction() {
        let mut spec = small_spec();
        spec.layers = vec![seq_layer("l0", 16, 8)];
        spec.informative_layer = 0;
        spec.time_window = [2, 4];
        spec.snr = 5.0;
        spec.num_samples = 12;
        let noise_spec = SynthSpec { snr: 0.0, ..spec.clone() };
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        synth_bank(&spec, d1.path()).unwrap();
        synth_bank(&noise_spec, d2.path()).unwrap();
        let with_sig = EmbeddingBank::open(d1.path()).unwrap();
        let noise = EmbeddingBank::open(d2.path()).unwrap();
        for i in 0..12 {
            let a = with_sig.get(i, 0).unwrap();
            let b = noise.get(i, 0).unwrap();
            for t in 0..16 {
                for j in 0..8 {
                    let diff = a.get2(t, j) - b.get2(t, j);
                    if t < 2 || t >= 4 {
                        assert_eq!(diff, 0.0, "sample {i} time {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn noise_seed_keeps_prototypes_fixed_but_resamples_noise() {
        // Planted signal (bank-with-signal minus bank-without) must be
        // identical across noise seeds; the noise itself must differ.
        let mut spec = small_spec();
        spec.layers = vec![seq_layer("l0", 8, 8)];
        spec.informative_layer = 0;
        spec.time_window = [0, 8];
        spec.snr = 3.0;
        spec.num_samples = 6;
        let planted = |noise_seed: u64| {
            let with_sig = SynthSpec { noise_seed: Some(noise_seed), ..spec.clone() };
            let noise_only = SynthSpec { snr: 0.0, ..with_sig.clone() };
            let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
            synth_bank(&with_sig, d1.path()).unwrap();
            synth_bank(&noise_only, d2.path()).unwrap();
            let a = EmbeddingBank::open(d1.path()).unwrap();
            let b = EmbeddingBank::open(d2.path()).unwrap();
            let mut sig = Vec::new();
            let mut raw = Vec::new();
            for i in 0..6 {
                let x = a.get(i, 0).unwrap();
                let y = b.get(i, 0).unwrap();
                sig.extend(x.data().iter().zip(y.data()).map(|(p, q)| p - q));
                raw.extend(y.data().iter().copied());
            }
            (sig, raw)
        };
        let (sig_a, raw_a) = planted(100);
        let (sig_b, raw_b) = planted(200);
        // Payloads are f32-quantized, so the recovered signal matches only
        // to f32 rounding of noise + signal.
        for (a, b) in sig_a.iter().zip(&sig_b) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_ne!(raw_a, raw_b);
    }

    #[test]
    fn multi_label_has_exactly_one_positive() {
        let mut spec = small_spec();
        spec.task = TaskKind::MultiLabel;
        let dir = tempdir().unwrap();
        synth_bank(&spec, dir.path()).unwrap();
        let bank = EmbeddingBank::open(dir.path()).unwrap();
        if let Labels::Multi(rows) = bank.labels() {
            for row in rows {
                assert_eq!(row.iter().map(|&b| b as usize).sum::<usize>(), 1);
            }
        } else {
            panic!("expected multi labels");
        }
    }

    #[test]
    fn invalid_informative_layer_rejected() {
        let mut spec = small_spec();
        spec.informative_layer = 5;
        let dir = tempdir().unwrap();
        assert!(matches!(synth_bank(&spec, dir.path()), Err(Error::InvalidSpec(_))));
    }
}
