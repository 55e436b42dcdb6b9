//! Convolution layer descriptions, their placement in a flat byte address
//! space, and the stream of row-vector MAC operations they decompose into.
//!
//! A window of a `filter_h x filter_w` filter decomposes into `filter_h`
//! row-vector dot products per contributing input channel. Each of those is
//! one [`VectorMacOp`]: the unit the simulator issues, predicts, and forwards.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default operand word size in bytes.
pub const WORD_SIZE: usize = 4;

/// Region bases are aligned to this many bytes.
pub const REGION_ALIGN: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Forward,
    BackwardInput,
    BackwardWeight,
}

impl Pass {
    pub fn as_str(self) -> &'static str {
        match self {
            Pass::Forward => "forward",
            Pass::BackwardInput => "backward_input",
            Pass::BackwardWeight => "backward_weight",
        }
    }

    pub fn parse(s: &str) -> Option<Pass> {
        match s {
            "forward" | "fwd" => Some(Pass::Forward),
            "backward_input" | "bwd_input" => Some(Pass::BackwardInput),
            "backward_weight" | "bwd_weight" => Some(Pass::BackwardWeight),
            _ => None,
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One convolution workload layer.
///
/// Forward and input-gradient layers sum over `in_channels` and produce
/// `out_channels` planes. Weight-gradient layers pair every output-gradient
/// plane (`out_channels`, used as the filter) with every input plane
/// (`in_channels`) and produce `out_channels * in_channels` planes with no
/// channel reduction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub pass: Pass,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub word_size: usize,
}

impl LayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        in_height: usize,
        in_width: usize,
        filter_h: usize,
        filter_w: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            pass: Pass::Forward,
            in_channels,
            out_channels,
            in_height,
            in_width,
            filter_h,
            filter_w,
            stride,
            padding,
            word_size: WORD_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::layer(&self.name, r));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.in_height == 0 || self.in_width == 0 {
            return bad("input dimensions must be positive");
        }
        if self.filter_h == 0 || self.filter_w == 0 {
            return bad("filter dimensions must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        if self.word_size == 0 || !self.word_size.is_power_of_two() {
            return bad("word size must be a positive power of two");
        }
        if self.filter_h > self.in_height + 2 * self.padding
            || self.filter_w > self.in_width + 2 * self.padding
        {
            return bad("filter larger than padded input");
        }
        if self.padding >= self.filter_h.max(self.filter_w) && self.padding > 0 {
            // every window at the corner would sit fully in padding
            return bad("padding must be smaller than the filter");
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.filter_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.filter_w) / self.stride + 1
    }

    /// Number of output planes.
    pub fn out_planes(&self) -> usize {
        match self.pass {
            Pass::BackwardWeight => self.out_channels * self.in_channels,
            _ => self.out_channels,
        }
    }

    /// Number of filter planes (each `filter_h x filter_w`).
    pub fn weight_planes(&self) -> usize {
        match self.pass {
            Pass::BackwardWeight => self.out_channels,
            _ => self.out_channels * self.in_channels,
        }
    }

    /// `(input plane, weight plane)` pairs that accumulate into one output plane,
    /// in ascending input-channel order.
    pub fn contributions(&self, out_plane: usize) -> Vec<(usize, usize)> {
        match self.pass {
            Pass::BackwardWeight => {
                let oc = out_plane / self.in_channels;
                let ic = out_plane % self.in_channels;
                vec![(ic, oc)]
            }
            _ => (0..self.in_channels)
                .map(|ic| (ic, out_plane * self.in_channels + ic))
                .collect(),
        }
    }

    /// Scalar multiply-accumulates of the unpadded layer.
    pub fn macs(&self) -> u64 {
        let per_out = match self.pass {
            Pass::BackwardWeight => 1,
            _ => self.in_channels,
        };
        (self.out_planes() * self.out_height() * self.out_width() * per_out) as u64
            * (self.filter_h * self.filter_w) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Input,
    Weight,
    Output,
}

/// Placement of one tensor: `planes` planes of `rows x cols` words.
/// Within a region the layout is plane-major, then row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorLayout {
    pub base_address: u64,
    pub region: Region,
    pub planes: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: u64,
    pub channel_stride: u64,
    pub word_size: u64,
}

impl TensorLayout {
    fn new(
        base_address: u64,
        region: Region,
        (planes, rows, cols): (usize, usize, usize),
        word_size: usize,
        row_stride: Option<u64>,
    ) -> Self {
        let word_size = word_size as u64;
        let row_stride = row_stride.unwrap_or(cols as u64 * word_size);
        TensorLayout {
            base_address,
            region,
            planes,
            rows,
            cols,
            row_stride,
            channel_stride: row_stride * rows as u64,
            word_size,
        }
    }

    pub fn addr(&self, plane: usize, row: usize, col: usize) -> u64 {
        debug_assert!(plane < self.planes && row < self.rows && col < self.cols);
        self.base_address
            + plane as u64 * self.channel_stride
            + row as u64 * self.row_stride
            + col as u64 * self.word_size
    }

    /// One past the last byte of the region.
    pub fn end(&self) -> u64 {
        self.base_address + self.planes as u64 * self.channel_stride
    }

    /// Inverse of [`TensorLayout::addr`]; `None` for addresses outside the
    /// region, in row padding, or not word aligned.
    pub fn decode(&self, addr: u64) -> Option<(usize, usize, usize)> {
        if addr < self.base_address || addr >= self.end() {
            return None;
        }
        let rel = addr - self.base_address;
        let plane = rel / self.channel_stride;
        let rem = rel % self.channel_stride;
        let row = rem / self.row_stride;
        let in_row = rem % self.row_stride;
        if !in_row.is_multiple_of(self.word_size) {
            return None;
        }
        let col = in_row / self.word_size;
        if col as usize >= self.cols {
            return None;
        }
        Some((plane as usize, row as usize, col as usize))
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.decode(addr).is_some()
    }

    pub fn element_index(&self, plane: usize, row: usize, col: usize) -> usize {
        (plane * self.rows + row) * self.cols + col
    }

    /// Logical element index of `addr`, if it lies in the region.
    pub fn index_of(&self, addr: u64) -> Option<usize> {
        self.decode(addr)
            .map(|(p, r, c)| self.element_index(p, r, c))
    }

    pub fn len(&self) -> usize {
        self.planes * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The three disjoint regions of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub input: TensorLayout,
    pub weight: TensorLayout,
    pub output: TensorLayout,
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

impl LayerLayout {
    /// Lays out input, weight and output back to back starting at address 0.
    pub fn new(layer: &LayerSpec) -> Result<Self> {
        Self::with_input_row_stride(layer, 0, None)
    }

    /// Same as [`LayerLayout::new`] with an explicit base and an optional
    /// input row stride (bytes). A stride of `0x1000` on a 256-word row
    /// reproduces the row addresses `0x00000, 0x01000, 0x02000` of the
    /// classic sliding-window illustration.
    pub fn with_input_row_stride(
        layer: &LayerSpec,
        base: u64,
        input_row_stride: Option<u64>,
    ) -> Result<Self> {
        layer.validate()?;
        let ws = layer.word_size;
        if let Some(rs) = input_row_stride {
            if rs < (layer.in_width * ws) as u64 || rs % ws as u64 != 0 {
                return Err(Error::layer(
                    &layer.name,
                    format!("input row stride {rs} shorter than a row or unaligned"),
                ));
            }
        }
        let input = TensorLayout::new(
            align_up(base, REGION_ALIGN),
            Region::Input,
            (layer.in_channels, layer.in_height, layer.in_width),
            ws,
            input_row_stride,
        );
        let weight = TensorLayout::new(
            align_up(input.end(), REGION_ALIGN),
            Region::Weight,
            (layer.weight_planes(), layer.filter_h, layer.filter_w),
            ws,
            None,
        );
        let output = TensorLayout::new(
            align_up(weight.end(), REGION_ALIGN),
            Region::Output,
            (layer.out_planes(), layer.out_height(), layer.out_width()),
            ws,
            None,
        );
        Ok(LayerLayout {
            input,
            weight,
            output,
        })
    }

    fn check(&self, layer: &LayerSpec) -> Result<()> {
        let ok = self.input.planes == layer.in_channels
            && self.input.rows == layer.in_height
            && self.input.cols == layer.in_width
            && self.weight.planes == layer.weight_planes()
            && self.weight.rows == layer.filter_h
            && self.weight.cols == layer.filter_w
            && self.output.planes == layer.out_planes()
            && self.output.rows == layer.out_height()
            && self.output.cols == layer.out_width();
        let disjoint =
            self.input.end() <= self.weight.base_address && self.weight.end() <= self.output.base_address;
        if !ok {
            return Err(Error::layer(&layer.name, "layout does not match layer dimensions"));
        }
        if !disjoint {
            return Err(Error::layer(&layer.name, "layout regions overlap"));
        }
        Ok(())
    }
}

/// One row-vector dot product: `length` input words times `length` weight
/// words, accumulated into one output word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorMacOp {
    pub input_vec_addr: u64,
    pub weight_vec_addr: u64,
    pub length: u32,
    pub output_addr: u64,
    pub warp_id: u32,
    pub lane_id: u32,
    pub sm_hint: u32,
}

/// Enumerates every row-vector MAC of `layer` in window order: output planes,
/// then output rows, then output columns (the window slides horizontally,
/// then down); within a window, ascending input channel then filter row.
///
/// Rows and columns that fall entirely into padding produce no op; partially
/// padded rows are clipped, which shortens the vector.
pub fn enumerate_ops(layer: &LayerSpec, layout: &LayerLayout) -> Result<Vec<VectorMacOp>> {
    layer.validate()?;
    layout.check(layer)?;
    let (oh, ow) = (layer.out_height(), layer.out_width());
    let (s, p) = (layer.stride, layer.padding);
    let mut ops = Vec::new();
    for out_plane in 0..layer.out_planes() {
        let contribs = layer.contributions(out_plane);
        for oy in 0..oh {
            for ox in 0..ow {
                let output_addr = layout.output.addr(out_plane, oy, ox);
                // horizontal clipping is the same for every row of the window
                let x0 = (ox * s) as isize - p as isize;
                let fw_lo = (-x0).max(0) as usize;
                let fw_hi = (layer.in_width as isize - x0).min(layer.filter_w as isize);
                if fw_hi <= fw_lo as isize {
                    continue;
                }
                let fw_hi = fw_hi as usize;
                for &(in_plane, w_plane) in &contribs {
                    for fh in 0..layer.filter_h {
                        let y = (oy * s + fh) as isize - p as isize;
                        if y < 0 || y >= layer.in_height as isize {
                            continue;
                        }
                        let col = (x0 + fw_lo as isize) as usize;
                        ops.push(VectorMacOp {
                            input_vec_addr: layout.input.addr(in_plane, y as usize, col),
                            weight_vec_addr: layout.weight.addr(w_plane, fh, fw_lo),
                            length: (fw_hi - fw_lo) as u32,
                            output_addr,
                            warp_id: 0,
                            lane_id: 0,
                            sm_hint: 0,
                        });
                    }
                }
            }
        }
    }
    Ok(ops)
}

/// Ops of one warp. Each lane owns the ops of one output element, in window
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarpProgram {
    pub warp_id: u32,
    pub sm_id: u32,
    pub lanes: Vec<Vec<VectorMacOp>>,
}

impl WarpProgram {
    pub fn op_count(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    /// The instruction stream the warp issues: lane by lane, so consecutive
    /// lanes reproduce the sliding order of their windows.
    pub fn instruction_stream(&self) -> Vec<VectorMacOp> {
        self.lanes.iter().flatten().copied().collect()
    }
}

/// [`map_to_warps_blocked`] with one warp per thread block.
pub fn map_to_warps(ops: &[VectorMacOp], warp_size: usize, n_sms: usize) -> Vec<WarpProgram> {
    map_to_warps_blocked(ops, warp_size, n_sms, 1)
}

/// Packs consecutive output elements into consecutive lanes (runs of ops
/// sharing an output address form one lane), `warp_size` lanes per warp, and
/// deals thread blocks of `warps_per_block` warps round-robin over SMs.
pub fn map_to_warps_blocked(
    ops: &[VectorMacOp],
    warp_size: usize,
    n_sms: usize,
    warps_per_block: usize,
) -> Vec<WarpProgram> {
    assert!(warp_size > 0 && n_sms > 0 && warps_per_block > 0);
    let mut warps: Vec<WarpProgram> = Vec::new();
    let mut last_output = None;
    for op in ops {
        if last_output != Some(op.output_addr) {
            last_output = Some(op.output_addr);
            let need_new = warps
                .last()
                .is_none_or(|w| w.lanes.len() == warp_size);
            if need_new {
                let warp_id = warps.len() as u32;
                let sm_id = ((warps.len() / warps_per_block) % n_sms) as u32;
                warps.push(WarpProgram {
                    warp_id,
                    sm_id,
                    lanes: Vec::new(),
                });
            }
            warps.last_mut().unwrap().lanes.push(Vec::new());
        }
        let warp = warps.last_mut().unwrap();
        let lane_id = (warp.lanes.len() - 1) as u32;
        let mut op = *op;
        op.warp_id = warp.warp_id;
        op.lane_id = lane_id;
        op.sm_hint = warp.sm_id;
        warp.lanes.last_mut().unwrap().push(op);
    }
    warps
}

/// Clears the low `log2(block_size)` bits.
pub fn block_of(addr: u64, block_size: u64) -> u64 {
    debug_assert!(block_size.is_power_of_two());
    addr & !(block_size - 1)
}

/// The computing cache block pair of an op: the blocks holding the start of
/// its input vector and of its weight vector.
pub fn block_pair_of(op: &VectorMacOp, block_size: u64) -> (u64, u64) {
    (
        block_of(op.input_vec_addr, block_size),
        block_of(op.weight_vec_addr, block_size),
    )
}

/// Every block touched by a vector of `length` words starting at `addr`.
pub fn spanned_blocks(
    addr: u64,
    length: u32,
    word_size: u64,
    block_size: u64,
) -> impl Iterator<Item = u64> {
    let first = block_of(addr, block_size);
    let last = block_of(addr + (length.max(1) as u64) * word_size - 1, block_size);
    (first..=last).step_by(block_size as usize)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HistogramBucket {
    pub lo: u64,
    /// Inclusive upper bound, `None` for the open last bucket.
    pub hi: Option<u64>,
    pub pairs: u64,
}

impl HistogramBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{}", self.lo, hi),
            None => format!(">{}", self.lo - 1),
        }
    }
}

/// Per-pair computation counts and their bucketed distribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReuseHistogram {
    pub block_size: u64,
    pub counts: BTreeMap<(u64, u64), u64>,
    pub buckets: Vec<HistogramBucket>,
}

/// Bucket edges of the reuse histogram: 1-100, 101-800, >800.
pub const REUSE_BUCKET_EDGES: [u64; 2] = [100, 800];

impl ReuseHistogram {
    pub fn total_ops(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn pairs(&self) -> usize {
        self.counts.len()
    }

    /// Fraction of pairs with strictly more than `threshold` computations.
    pub fn fraction_above(&self, threshold: u64) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let n = self.counts.values().filter(|&&c| c > threshold).count();
        n as f64 / self.counts.len() as f64
    }
}

pub fn reuse_histogram(ops: &[VectorMacOp], block_size: u64) -> ReuseHistogram {
    let mut counts = BTreeMap::new();
    for op in ops {
        *counts.entry(block_pair_of(op, block_size)).or_insert(0u64) += 1;
    }
    let mut buckets = Vec::new();
    let mut lo = 1;
    for &edge in &REUSE_BUCKET_EDGES {
        buckets.push(HistogramBucket {
            lo,
            hi: Some(edge),
            pairs: 0,
        });
        lo = edge + 1;
    }
    buckets.push(HistogramBucket {
        lo,
        hi: None,
        pairs: 0,
    });
    for &c in counts.values() {
        let b = buckets
            .iter_mut()
            .find(|b| c >= b.lo && b.hi.is_none_or(|hi| c <= hi))
            .expect("buckets cover 1..");
        b.pairs += 1;
    }
    ReuseHistogram {
        block_size,
        counts,
        buckets,
    }
}

fn shrink_dim(dim: usize, shrink: usize, filter: usize, padding: usize) -> usize {
    dim.div_ceil(shrink)
        .max(filter.saturating_sub(2 * padding))
        .max(1)
}

#[allow(clippy::too_many_arguments)]
fn scaled(
    name: &str,
    in_c: usize,
    out_c: usize,
    hw: usize,
    f: usize,
    stride: usize,
    pad: usize,
    shrink: usize,
) -> LayerSpec {
    let d = shrink_dim(hw, shrink, f, pad);
    LayerSpec::forward(name, in_c, out_c, d, d, f, f, stride, pad)
}

/// LeNet5 at canonical dimensions.
pub fn lenet5_layers() -> Vec<LayerSpec> {
    lenet5_layers_scaled(1)
}

/// LeNet5 with every convolution input side divided by `shrink` (rounded up,
/// never below the filter). F1 and F2 are fully connected layers expressed as
/// convolutions whose window spans the whole (1x1) input.
pub fn lenet5_layers_scaled(shrink: usize) -> Vec<LayerSpec> {
    let s = shrink.max(1);
    vec![
        scaled("C1", 1, 6, 32, 5, 1, 0, s),
        scaled("C2", 6, 16, 14, 5, 1, 0, s),
        scaled("C3", 16, 120, 5, 5, 1, 0, s),
        LayerSpec::forward("F1", 120, 84, 1, 1, 1, 1, 1, 0),
        LayerSpec::forward("F2", 84, 10, 1, 1, 1, 1, 1, 0),
    ]
}

/// The first four AlexNet convolution layers at canonical dimensions.
pub fn alexnet_conv_layers() -> Vec<LayerSpec> {
    alexnet_conv_layers_scaled(1)
}

pub fn alexnet_conv_layers_scaled(shrink: usize) -> Vec<LayerSpec> {
    let s = shrink.max(1);
    vec![
        scaled("conv1", 3, 96, 227, 11, 4, 0, s),
        scaled("conv2", 96, 256, 27, 5, 1, 2, s),
        scaled("conv3", 256, 384, 13, 3, 1, 1, s),
        scaled("conv4", 384, 384, 13, 3, 1, 1, s),
    ]
}

/// The 4x4 input / 3x3 filter single-channel layer used throughout the tests.
pub fn toy_layer() -> LayerSpec {
    LayerSpec::forward("toy", 1, 1, 4, 4, 3, 3, 1, 0)
}

/// Input-gradient and weight-gradient layers of a forward layer, both as
/// plain direct convolutions.
///
/// * input gradient: the output gradient (zero-inserted when `stride > 1`)
///   padded by `filter - 1 - padding` and convolved with the rotated filters;
/// * weight gradient: the forward input convolved with each output-gradient
///   plane as the filter.
pub fn backward_specs(layer: &LayerSpec) -> Result<Vec<LayerSpec>> {
    if layer.pass != Pass::Forward {
        return Err(Error::layer(&layer.name, "backward specs need a forward layer"));
    }
    layer.validate()?;
    let (oh, ow) = (layer.out_height(), layer.out_width());
    let s = layer.stride;
    let bi = LayerSpec {
        name: format!("{}_bwd_input", layer.name),
        pass: Pass::BackwardInput,
        in_channels: layer.out_channels,
        out_channels: layer.in_channels,
        in_height: (oh - 1) * s + 1,
        in_width: (ow - 1) * s + 1,
        filter_h: layer.filter_h,
        filter_w: layer.filter_w,
        stride: 1,
        padding: layer
            .filter_h
            .min(layer.filter_w)
            .saturating_sub(1 + layer.padding),
        word_size: layer.word_size,
    };
    let bw = LayerSpec {
        name: format!("{}_bwd_weight", layer.name),
        pass: Pass::BackwardWeight,
        in_channels: layer.in_channels,
        out_channels: layer.out_channels,
        in_height: layer.in_height,
        in_width: layer.in_width,
        filter_h: oh,
        filter_w: ow,
        stride: 1,
        padding: layer.padding,
        word_size: layer.word_size,
    };
    bi.validate()?;
    bw.validate()?;
    Ok(vec![bi, bw])
}

/// Writes ops as `warp_id,lane_id,input_addr,weight_addr,len,output_addr`.
pub fn write_ops_csv<W: Write>(mut w: W, ops: &[VectorMacOp]) -> std::io::Result<()> {
    writeln!(w, "warp_id,lane_id,input_addr,weight_addr,len,output_addr")?;
    for op in ops {
        writeln!(
            w,
            "{},{},{:#x},{:#x},{},{:#x}",
            op.warp_id, op.lane_id, op.input_vec_addr, op.weight_vec_addr, op.length, op.output_addr
        )?;
    }
    Ok(())
}
