//! The dual-head denoise + super-resolution network: assembly, inference,
//! and checkpoint persistence.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::image::Image;
use crate::ops::ConvSpec;
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Shape, Tensor};

/// Network hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Backbone width.
    pub base_channels: usize,
    /// Depthwise block repeats.
    pub r1: usize,
    /// Conv block repeats.
    pub r2: usize,
    /// Super-resolution factor (power of two).
    pub sr_scale: usize,
    /// 1 (gray) or 3 (RGB).
    pub in_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Desk-scale defaults; widen base_channels for larger runs.
        ModelConfig { base_channels: 8, r1: 2, r2: 2, sr_scale: 4, in_channels: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.r1 < 1 || self.r2 < 1 {
            return Err(Error::Config("r1 and r2 must be >= 1".into()));
        }
        if self.sr_scale == 0 || !self.sr_scale.is_power_of_two() {
            return Err(Error::Config(format!(
                "sr_scale {} is not a power of 2",
                self.sr_scale
            )));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::Config("in_channels must be 1 or 3".into()));
        }
        // The SR head reaches full resolution by pixel-shuffling the 2*B
        // concatenated feature map; its channels must divide out exactly.
        let head_c = 2 * self.base_channels;
        if head_c % (self.sr_scale * self.sr_scale) != 0 {
            return Err(Error::Config(format!(
                "2 * base_channels = {head_c} not divisible by sr_scale^2 = {}",
                self.sr_scale * self.sr_scale
            )));
        }
        Ok(())
    }

    fn sr_stages(&self) -> usize {
        self.sr_scale.trailing_zeros() as usize
    }
}

/// An assembled network bound to a fixed input shape.
pub struct DdsrNet<T: Scalar> {
    pub graph: Graph<T>,
    pub config: ModelConfig,
    pub input_shape: Shape,
    pub input: NodeId,
    pub denoised: NodeId,
    pub sr: NodeId,
}

fn init_tensor<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
        .collect();
    Tensor::new(shape, data).expect("init shape consistent")
}

struct ParamFactory<'a, T: Scalar> {
    graph: &'a mut Graph<T>,
    seed: u64,
    next_stream: u64,
}

impl<'a, T: Scalar> ParamFactory<'a, T> {
    fn conv(&mut self, name: &str, spec: &ConvSpec, depthwise: bool) -> (NodeId, Option<NodeId>) {
        let (kh, kw) = spec.kernel;
        let (shape, fan_in) = if depthwise {
            ([spec.in_channels, 1, kh, kw], kh * kw)
        } else {
            (
                [spec.out_channels, spec.in_channels, kh, kw],
                spec.in_channels * kh * kw,
            )
        };
        let mut rng = SplitMix64::stream(self.seed, self.next_stream);
        self.next_stream += 1;
        let w = self
            .graph
            .param(&format!("{name}.weight"), init_tensor(shape, fan_in, &mut rng));
        let b = spec.bias.then(|| {
            let mut rng = SplitMix64::stream(self.seed, self.next_stream);
            self.next_stream += 1;
            self.graph.param(
                &format!("{name}.bias"),
                init_tensor([1, spec.out_channels, 1, 1], fan_in, &mut rng),
            )
        });
        (w, b)
    }

    fn zero_conv(&mut self, name: &str, spec: &ConvSpec) -> (NodeId, Option<NodeId>) {
        let (kh, kw) = spec.kernel;
        let w = self.graph.param(
            &format!("{name}.weight"),
            Tensor::zeros([spec.out_channels, spec.in_channels, kh, kw]),
        );
        let b = spec.bias.then(|| {
            self.graph
                .param(&format!("{name}.bias"), Tensor::zeros([1, spec.out_channels, 1, 1]))
        });
        (w, b)
    }
}

/// Assemble the network for a fixed (batch, in_channels, H, W) input.
/// Initial parameters are drawn from `init_seed`; the offset-producing
/// convolution starts at zero so deformable sampling begins on the
/// regular grid.
pub fn build<T: Scalar>(
    config: &ModelConfig,
    batch: usize,
    height: usize,
    width: usize,
    init_seed: u64,
) -> Result<DdsrNet<T>> {
    config.validate()?;
    if height % 2 != 0 || width % 2 != 0 {
        return Err(Error::Config(format!(
            "input extent {height}x{width} must be divisible by 2"
        )));
    }
    let b_ch = config.base_channels;
    let in_c = config.in_channels;
    let mut graph = Graph::new();
    let input = graph.input("input", [batch, in_c, height, width]);
    let mut factory = ParamFactory { graph: &mut graph, seed: init_seed, next_stream: 0 };

    // DeformConv block: sibling 3x3 conv produces per-tap offsets.
    let offset_spec = ConvSpec::same(in_c, 18, 3, 3);
    let (off_w, off_b) = factory.zero_conv("deform.offset", &offset_spec);
    let deform_spec = ConvSpec::same(in_c, b_ch, 3, 3);
    let (def_w, def_b) = factory.conv("deform.conv", &deform_spec, false);

    // DepthConv blocks: depthwise 3x3 + pointwise 1x1.
    let dw_spec = ConvSpec::same(b_ch, b_ch, 3, 3);
    let pw_spec = ConvSpec::same(b_ch, b_ch, 1, 1);
    let mut depth_params = Vec::new();
    for i in 0..config.r1 {
        let dw = factory.conv(&format!("depth{i}.dw"), &dw_spec, true);
        let pw = factory.conv(&format!("depth{i}.pw"), &pw_spec, false);
        depth_params.push((dw, pw));
    }

    // ConvBlocks at half resolution.
    let cb_spec = ConvSpec::same(4 * b_ch, 4 * b_ch, 3, 3);
    let conv_params: Vec<_> = (0..config.r2)
        .map(|i| factory.conv(&format!("convblock{i}"), &cb_spec, false))
        .collect();

    let head_c = 2 * b_ch;
    let dn_spec = ConvSpec::same(head_c, in_c, 1, 1);
    let (dn_w, dn_b) = factory.conv("denoise_head", &dn_spec, false);
    let sr_c = head_c / (config.sr_scale * config.sr_scale);
    let sr_spec = ConvSpec::same(sr_c, in_c, 1, 1);
    let (sr_w, sr_b) = factory.conv("sr_head", &sr_spec, false);

    // Wire the topology.
    let offsets = graph.conv2d(input, off_w, off_b, offset_spec)?;
    let deform = graph.deform_conv2d(input, def_w, offsets, def_b, deform_spec)?;
    let mut feat = graph.relu(deform);
    for ((dw_w, dw_b), (pw_w, pw_b)) in depth_params {
        let dw = graph.depthwise_conv2d(feat, dw_w, dw_b, dw_spec)?;
        let pw = graph.conv2d(dw, pw_w, pw_b, pw_spec)?;
        let act = graph.relu(pw);
        feat = graph.add(feat, act)?;
    }
    let pre_unshuffle = feat;
    let mut down = graph.pixel_unshuffle(pre_unshuffle, 2)?;
    for (w, b) in conv_params {
        let conv = graph.conv2d(down, w, b, cb_spec)?;
        let act = graph.relu(conv);
        down = graph.add(down, act)?;
    }
    // Realign to input resolution and join with the pre-unshuffle features.
    let up = graph.pixel_shuffle(down, 2)?;
    let cat = graph.concat(&[pre_unshuffle, up])?;

    let denoised = graph.conv2d(cat, dn_w, dn_b, dn_spec)?;
    let mut sr_feat = cat;
    for _ in 0..config.sr_stages() {
        sr_feat = graph.pixel_shuffle(sr_feat, 2)?;
    }
    let sr = graph.conv2d(sr_feat, sr_w, sr_b, sr_spec)?;

    graph.mark_output("denoised", denoised);
    graph.mark_output("sr", sr);
    Ok(DdsrNet {
        graph,
        config: *config,
        input_shape: [batch, in_c, height, width],
        input,
        denoised,
        sr,
    })
}

impl<T: Scalar> DdsrNet<T> {
    pub fn parameter_count(&self) -> usize {
        self.graph
            .param_ids()
            .iter()
            .map(|&id| self.graph.param_value(id).numel())
            .sum()
    }

    /// Snapshot current parameters into a checkpoint.
    pub fn to_checkpoint(&self, train_seed: u64, epoch: u32) -> Checkpoint {
        let params = self
            .graph
            .param_ids()
            .iter()
            .map(|&id| {
                let v = self.graph.param_value(id);
                ParamEntry {
                    name: self.graph.param_name(id).to_string(),
                    shape: v.shape(),
                    data: v.data().iter().map(|&x| Scalar::to_f64(x) as f32).collect(),
                }
            })
            .collect();
        Checkpoint { config: self.config, seed: train_seed, epoch, params }
    }

    /// Load checkpoint parameters into this (already built) network.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.config != self.config {
            return Err(Error::CheckpointFormat(
                "checkpoint config does not match the built model".into(),
            ));
        }
        let by_name: HashMap<&str, &ParamEntry> =
            ckpt.params.iter().map(|p| (p.name.as_str(), p)).collect();
        for &id in self.graph.param_ids().to_vec().iter() {
            let name = self.graph.param_name(id).to_string();
            let entry = by_name.get(name.as_str()).ok_or_else(|| {
                Error::CheckpointFormat(format!("checkpoint missing parameter '{name}'"))
            })?;
            let values: Vec<f64> = entry.data.iter().map(|&v| v as f64).collect();
            let tensor = Tensor::from_f64_slice(entry.shape, &values)?;
            self.graph.set_param_value(id, tensor)?;
        }
        Ok(())
    }
}

// ---- checkpoint format ----------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"DDSR";
const CKPT_VERSION: u32 = 1;

/// One parameter: name, shape, and little-endian f32 payload.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

/// Serialized model state: JSON header plus a flat f32 payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: u32,
    pub params: Vec<ParamEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Shape,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    magic: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    epoch: u32,
    manifest: Vec<ManifestEntry>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            magic: String::from_utf8_lossy(CKPT_MAGIC).into_owned(),
            version: CKPT_VERSION,
            config: self.config,
            seed: self.seed,
            epoch: self.epoch,
            manifest: self
                .params
                .iter()
                .map(|p| ManifestEntry { name: p.name.clone(), shape: p.shape })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(CKPT_MAGIC)?;
        file.write_all(&CKPT_VERSION.to_le_bytes())?;
        file.write_all(&(header_json.len() as u64).to_le_bytes())?;
        file.write_all(&header_json)?;
        for p in &self.params {
            for v in &p.data {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)
            .map_err(|_| Error::CheckpointFormat("file too short for magic".into()))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::CheckpointFormat(format!(
                "bad magic {:?}, expected \"DDSR\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)
            .map_err(|_| Error::CheckpointFormat("truncated version".into()))?;
        let version = u32::from_le_bytes(word);
        if version != CKPT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported version {version} (expected {CKPT_VERSION})"
            )));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::CheckpointFormat("truncated header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json)
            .map_err(|_| Error::CheckpointFormat("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| Error::CheckpointFormat(format!("invalid header JSON: {e}")))?;
        if header.magic.as_bytes() != CKPT_MAGIC {
            return Err(Error::CheckpointFormat("header magic mismatch".into()));
        }
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        let expected: usize = header
            .manifest
            .iter()
            .map(|m| m.shape.iter().product::<usize>() * 4)
            .sum();
        if payload.len() != expected {
            return Err(Error::CheckpointFormat(format!(
                "payload length {} does not match manifest ({expected} bytes)",
                payload.len()
            )));
        }
        let mut params = Vec::with_capacity(header.manifest.len());
        let mut offset = 0;
        for entry in header.manifest {
            let count: usize = entry.shape.iter().product();
            let data: Vec<f32> = (0..count)
                .map(|i| {
                    let b = &payload[offset + i * 4..offset + i * 4 + 4];
                    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
                })
                .collect();
            offset += count * 4;
            params.push(ParamEntry { name: entry.name, shape: entry.shape, data });
        }
        Ok(Checkpoint { config: header.config, seed: header.seed, epoch: header.epoch, params })
    }
}

/// Run inference: returns the denoised image (input resolution) and the
/// super-resolved image (sr_scale times the input resolution), both
/// clamped to [0, 1] and quantized to 8 bits.
pub fn infer(ckpt: &Checkpoint, img: &Image) -> Result<(Image, Image)> {
    if img.channels() != ckpt.config.in_channels {
        return Err(Error::Config(format!(
            "image has {} channels but the checkpoint expects {}",
            img.channels(),
            ckpt.config.in_channels
        )));
    }
    let mut net: DdsrNet<f32> = build(&ckpt.config, 1, img.height(), img.width(), 0)?;
    net.load_checkpoint(ckpt)?;
    let outputs = net.graph.forward(&[("input", img.to_tensor())])?;
    let denoised = Image::from_tensor(&outputs["denoised"])?;
    let sr = Image::from_tensor(&outputs["sr"])?;
    Ok((denoised, sr))
}
