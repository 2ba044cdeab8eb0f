//! The three fusion variants built on one shared convolutional trunk design,
//! their checkpoint format, and manifest-level train / evaluate helpers.

use std::fs;
use std::path::Path;

use crate::dataset::{
    augment_images, load_images, stratified_split, ClipImages, FusionMode, ImageCache, Manifest,
    ModelInput, PipelineConfig, Split,
};
use crate::doppler::GestureClass;
use crate::dsp::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::nn::{
    evaluate, softmax_cross_entropy, train, Classifier, ConfusionMatrix, History, Layer, LayerSpec,
    Sequential, Tensor, TrainConfig,
};
use crate::seed::{self, stage};

/// Output channels of the five conv blocks.
pub const TRUNK_CHANNELS: [usize; 5] = [8, 16, 32, 64, 64];
/// Flattened trunk output: 64 channels on a 3x3 grid.
pub const FEATURES: usize = 576;

const HEAD_SEED_INDEX: u64 = 100;

/// conv3x3 -> relu -> maxpool2x2, five times, then flatten.
pub fn trunk_specs(in_ch: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut c = in_ch;
    for &out in &TRUNK_CHANNELS {
        specs.push(LayerSpec::Conv2d {
            k_h: 3,
            k_w: 3,
            in_ch: c,
            out_ch: out,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::MaxPool2x2);
        c = out;
    }
    specs.push(LayerSpec::Flatten);
    specs
}

/// One trunk per input stream (two for late fusion) and a dense head over
/// the concatenated features. The head emits logits; probabilities come
/// from `Classifier::predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    mode: FusionMode,
    trunks: Vec<Sequential>,
    head: Sequential,
}

pub fn build_model(mode: FusionMode, seed: u64) -> Result<FusionModel> {
    let (n_trunks, in_ch) = match mode {
        FusionMode::Single => (1, 1),
        FusionMode::Early => (1, 3),
        FusionMode::Late => (2, 1),
    };
    let specs = trunk_specs(in_ch);
    let trunks = (0..n_trunks)
        .map(|i| {
            Sequential::new(
                vec![in_ch, IMAGE_SIZE, IMAGE_SIZE],
                &specs,
                &mut seed::rng(seed::derive(seed, stage::INIT, i as u64)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let width = FEATURES * n_trunks;
    let head = Sequential::new(
        vec![width],
        &[LayerSpec::Dense {
            inputs: width,
            outputs: GestureClass::COUNT,
        }],
        &mut seed::rng(seed::derive(seed, stage::INIT, HEAD_SEED_INDEX)),
    )?;
    FusionModel::from_parts(mode, trunks, head)
}

impl FusionModel {
    pub fn from_parts(mode: FusionMode, trunks: Vec<Sequential>, head: Sequential) -> Result<Self> {
        let (n, in_ch) = match mode {
            FusionMode::Single => (1, 1),
            FusionMode::Early => (1, 3),
            FusionMode::Late => (2, 1),
        };
        if trunks.len() != n {
            return Err(Error::Checkpoint(format!(
                "{mode} model needs {n} trunk(s), got {}",
                trunks.len()
            )));
        }
        let mut width = 0;
        for t in &trunks {
            let expected = [in_ch, IMAGE_SIZE, IMAGE_SIZE];
            if t.input_shape() != expected {
                return Err(Error::ShapeMismatch {
                    expected: expected.to_vec(),
                    actual: t.input_shape().to_vec(),
                });
            }
            width += t.output_shape().iter().product::<usize>();
        }
        if head.input_shape() != [width] || head.output_shape() != [GestureClass::COUNT] {
            return Err(Error::ShapeMismatch {
                expected: vec![width, GestureClass::COUNT],
                actual: [head.input_shape(), &head.output_shape()].concat(),
            });
        }
        Ok(Self { mode, trunks, head })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn trunks(&self) -> &[Sequential] {
        &self.trunks
    }

    pub fn trunks_mut(&mut self) -> &mut [Sequential] {
        &mut self.trunks
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Sequential {
        &mut self.head
    }

    fn inputs<'a>(&self, x: &'a ModelInput) -> Result<Vec<&'a Tensor>> {
        if x.mode() != self.mode {
            return Err(Error::invalid(format!(
                "{} input given to a {} model",
                x.mode(),
                self.mode
            )));
        }
        Ok(x.tensors())
    }

    /// Concatenated trunk features, trunk order.
    pub fn features(&self, x: &ModelInput) -> Result<Vec<f64>> {
        let mut feats = Vec::with_capacity(FEATURES * self.trunks.len());
        for (t, input) in self.trunks.iter().zip(self.inputs(x)?) {
            feats.extend_from_slice(t.forward(input)?.data());
        }
        Ok(feats)
    }

    /// Multi-line architecture summary with parameter counts.
    pub fn describe(&self) -> String {
        let mut out = format!("{} fusion, {} parameters\n", self.mode, self.param_count());
        for (i, t) in self.trunks.iter().enumerate() {
            out.push_str(&format!("trunk {i} ({} params):", t.param_count()));
            for l in t.layers() {
                out.push_str(&format!(" {}", l.spec));
            }
            out.push('\n');
        }
        out.push_str(&format!("head ({} params):", self.head.param_count()));
        for l in self.head.layers() {
            out.push_str(&format!(" {}", l.spec));
        }
        out.push_str(" softmax\n");
        out
    }
}

impl Classifier for FusionModel {
    type Input = ModelInput;

    fn logits(&self, x: &ModelInput) -> Result<Vec<f64>> {
        let feats = self.features(x)?;
        let n = feats.len();
        Ok(self
            .head
            .forward(&Tensor::from_parts(vec![n], feats))?
            .into_data())
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.trunks.iter().flat_map(|t| t.params()).collect();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self
            .trunks
            .iter_mut()
            .flat_map(|t| t.params_mut())
            .collect();
        p.extend(self.head.params_mut());
        p
    }

    fn accumulate_gradients(
        &self,
        x: &ModelInput,
        label: usize,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let inputs = self.inputs(x)?;
        let mut traces = Vec::with_capacity(self.trunks.len());
        let mut feats = Vec::with_capacity(FEATURES * self.trunks.len());
        for (t, input) in self.trunks.iter().zip(inputs) {
            let (y, tr) = t.forward_trace(input)?;
            feats.extend_from_slice(y.data());
            traces.push((y.len(), tr));
        }
        let n = feats.len();
        let (out, head_trace) = self
            .head
            .forward_trace(&Tensor::from_parts(vec![n], feats))?;
        let logits = out.into_data();
        let (loss, mut g) = softmax_cross_entropy(&logits, label)?;
        g.iter_mut().for_each(|v| *v *= scale);

        let trunk_slots: usize = self.trunks.iter().map(|t| t.params().len()).sum();
        let (trunk_grads, head_grads) = grads.split_at_mut(trunk_slots);
        let k = g.len();
        let d_feats = self
            .head
            .backward(head_trace, Tensor::from_parts(vec![k], g), head_grads, true)?
            .expect("requested input gradient")
            .into_data();

        let mut slot = 0;
        let mut offset = 0;
        for (t, (len, tr)) in self.trunks.iter().zip(traces) {
            let slots = t.params().len();
            let dy = Tensor::from_parts(vec![len], d_feats[offset..offset + len].to_vec());
            t.backward(tr, dy, &mut trunk_grads[slot..slot + slots], false)?;
            slot += slots;
            offset += len;
        }
        Ok((loss, logits))
    }
}

const CKPT_MAGIC: &[u8; 8] = b"SONARGCK";
const CKPT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn write_net(out: &mut Vec<u8>, net: &Sequential) {
    put_u32(out, net.input_shape().len());
    for &d in net.input_shape() {
        put_u32(out, d);
    }
    put_u32(out, net.layers().len());
    for l in net.layers() {
        let (tag, args) = match l.spec {
            LayerSpec::Conv2d {
                k_h,
                k_w,
                in_ch,
                out_ch,
            } => (0u8, vec![k_h, k_w, in_ch, out_ch]),
            LayerSpec::MaxPool2x2 => (1, vec![]),
            LayerSpec::Relu => (2, vec![]),
            LayerSpec::Flatten => (3, vec![]),
            LayerSpec::Dense { inputs, outputs } => (4, vec![inputs, outputs]),
            LayerSpec::Softmax => (5, vec![]),
        };
        out.push(tag);
        for a in args {
            put_u32(out, a);
        }
        for buf in [&l.weights, &l.bias] {
            put_u32(out, buf.len());
            for w in buf.iter() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("bad length".into()))?,
        )?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|w| !w.is_finite()) {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(v)
    }

    fn net(&mut self) -> Result<Sequential> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n_layers = self.u32()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let spec = match self.u8()? {
                0 => LayerSpec::Conv2d {
                    k_h: self.u32()?,
                    k_w: self.u32()?,
                    in_ch: self.u32()?,
                    out_ch: self.u32()?,
                },
                1 => LayerSpec::MaxPool2x2,
                2 => LayerSpec::Relu,
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Dense {
                    inputs: self.u32()?,
                    outputs: self.u32()?,
                },
                5 => LayerSpec::Softmax,
                t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
            };
            let weights = self.f64s()?;
            let bias = self.f64s()?;
            layers.push(Layer {
                spec,
                weights,
                bias,
            });
        }
        Sequential::from_layers(shape, layers)
            .map_err(|e| Error::Checkpoint(format!("inconsistent layer stack: {e}")))
    }
}

impl FusionModel {
    /// Little-endian: magic, version, mode tag, trunk count, each trunk,
    /// then the head. Each net stores its input shape and per layer a tag,
    /// its shape arguments and length-prefixed weights and biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.push(self.mode.tag());
        put_u32(&mut out, self.trunks.len());
        for t in &self.trunks {
            write_net(&mut out, t);
        }
        write_net(&mut out, &self.head);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let tag = r.u8()?;
        let mode = FusionMode::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown fusion mode tag {tag}")))?;
        let n = r.u32()?;
        if n > 2 {
            return Err(Error::Checkpoint(format!("implausible trunk count {n}")));
        }
        let trunks = (0..n).map(|_| r.net()).collect::<Result<Vec<_>>>()?;
        let head = r.net()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Self::from_parts(mode, trunks, head).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads a checkpoint and refuses one trained for another mode.
    pub fn load_for_mode(path: &Path, mode: FusionMode) -> Result<Self> {
        let m = Self::load(path)?;
        if m.mode != mode {
            return Err(Error::Checkpoint(format!(
                "{}: checkpoint holds a {} model, {} was requested",
                path.display(),
                m.mode,
                mode
            )));
        }
        Ok(m)
    }
}

/// Settings for a full train run over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub mode: FusionMode,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    /// Share of each training class held out for validation.
    pub val_fraction: f64,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

impl Experiment {
    pub fn new(mode: FusionMode, train: TrainConfig) -> Self {
        Self {
            mode,
            train,
            pipeline: PipelineConfig::default(),
            val_fraction: DEFAULT_VAL_FRACTION,
        }
    }
}

fn pack(set: Vec<(ClipImages, usize)>, mode: FusionMode) -> Vec<(ModelInput, usize)> {
    set.into_iter()
        .map(|(img, y)| (img.pack(mode), y))
        .collect()
}

/// Trains a fresh model on the manifest's training split. Augmentation is
/// applied to training clips only, never to validation or test clips.
pub fn train_on_manifest(
    root: &Path,
    manifest: &Manifest,
    exp: &Experiment,
    cache: Option<&ImageCache>,
) -> Result<(FusionModel, History)> {
    let s = exp.train.seed;
    let m = stratified_split(manifest, exp.val_fraction, s)?;
    let train_imgs = load_images(root, m.split(Split::Train), &exp.pipeline, cache)?;
    if train_imgs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no training clips",
            root.display()
        )));
    }
    let val_imgs = load_images(root, m.split(Split::Val), &exp.pipeline, cache)?;
    let augmented = augment_images(&train_imgs, &exp.train.augment, s)?;
    log::info!(
        "training {} model on {} images ({} clips), {} validation clips",
        exp.mode,
        augmented.len(),
        train_imgs.len(),
        val_imgs.len()
    );
    let train_set = pack(augmented, exp.mode);
    let val_set = pack(val_imgs, exp.mode);
    let mut model = build_model(exp.mode, s)?;
    let history = train(&mut model, &train_set, &val_set, &exp.train)?;
    Ok((model, history))
}

/// Accuracy and confusion matrix on one split of the manifest.
pub fn evaluate_on_manifest(
    model: &FusionModel,
    root: &Path,
    manifest: &Manifest,
    split: Split,
    pipeline: &PipelineConfig,
    cache: Option<&ImageCache>,
) -> Result<(f64, ConfusionMatrix)> {
    let imgs = load_images(root, manifest.split(split), pipeline, cache)?;
    if imgs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no clips in the {} split",
            root.display(),
            split.as_str()
        )));
    }
    evaluate(model, &pack(imgs, model.mode()))
}
