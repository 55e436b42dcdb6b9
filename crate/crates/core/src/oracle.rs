//! Reference direct convolution and output comparison.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{LayerSpec, Pass};

/// Relative tolerance for float32 comparisons.
pub const FLOAT_REL_TOL: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithMode {
    Int32,
    Float32,
}

impl ArithMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ArithMode::Int32 => "int32",
            ArithMode::Float32 => "float32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "int32" | "int" => Some(ArithMode::Int32),
            "float32" | "float" => Some(ArithMode::Float32),
            _ => None,
        }
    }
}

/// One dot-product or accumulator value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float(f32),
}

impl Scalar {
    pub fn zero(mode: ArithMode) -> Self {
        match mode {
            ArithMode::Int32 => Scalar::Int(0),
            ArithMode::Float32 => Scalar::Float(0.0),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    Int(Vec<i32>),
    Float(Vec<f32>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Int(v) => v.len(),
            Values::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn generate(mode: ArithMode, n: usize, rng: &mut ChaCha8Rng) -> Self {
        match mode {
            ArithMode::Int32 => Values::Int((0..n).map(|_| rng.gen_range(-8..=8)).collect()),
            ArithMode::Float32 => {
                Values::Float((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            }
        }
    }
}

/// Operand values of one layer, in logical (plane, row, col) order.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryImage {
    pub mode: ArithMode,
    pub seed: u64,
    pub input: Values,
    pub weight: Values,
}

impl MemoryImage {
    /// Seeded uniform values: integers in `-8..=8`, floats in `[-1, 1)`.
    pub fn generate(layer: &LayerSpec, mode: ArithMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = layer.in_channels * layer.in_height * layer.in_width;
        let n_w = layer.weight_planes() * layer.filter_h * layer.filter_w;
        let input = Values::generate(mode, n_in, &mut rng);
        let weight = Values::generate(mode, n_w, &mut rng);
        MemoryImage {
            mode,
            seed,
            input,
            weight,
        }
    }

    pub fn from_int(input: Vec<i32>, weight: Vec<i32>) -> Self {
        MemoryImage {
            mode: ArithMode::Int32,
            seed: 0,
            input: Values::Int(input),
            weight: Values::Int(weight),
        }
    }

    /// Dot product of `len` consecutive input and weight elements starting at
    /// the given logical indices.
    pub fn dot(&self, in_idx: usize, w_idx: usize, len: usize) -> Option<Scalar> {
        match (&self.input, &self.weight) {
            (Values::Int(x), Values::Int(w)) => {
                let (x, w) = (x.get(in_idx..in_idx + len)?, w.get(w_idx..w_idx + len)?);
                Some(Scalar::Int(
                    x.iter().zip(w).map(|(&a, &b)| a as i64 * b as i64).sum(),
                ))
            }
            (Values::Float(x), Values::Float(w)) => {
                let (x, w) = (x.get(in_idx..in_idx + len)?, w.get(w_idx..w_idx + len)?);
                Some(Scalar::Float(x.iter().zip(w).map(|(&a, &b)| a * b).sum()))
            }
            _ => None,
        }
    }

    fn check(&self, layer: &LayerSpec) -> Result<()> {
        let n_in = layer.in_channels * layer.in_height * layer.in_width;
        let n_w = layer.weight_planes() * layer.filter_h * layer.filter_w;
        if self.input.len() != n_in || self.weight.len() != n_w {
            return Err(Error::layer(
                &layer.name,
                format!(
                    "memory image holds {}/{} input/weight values, layer needs {n_in}/{n_w}",
                    self.input.len(),
                    self.weight.len()
                ),
            ));
        }
        Ok(())
    }
}

/// A complete output tensor in logical order.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputMap {
    Int(Vec<i64>),
    Float(Vec<f32>),
}

impl OutputMap {
    pub fn len(&self) -> usize {
        match self {
            OutputMap::Int(v) => v.len(),
            OutputMap::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<Scalar> {
        match self {
            OutputMap::Int(v) => v.get(i).map(|&x| Scalar::Int(x)),
            OutputMap::Float(v) => v.get(i).map(|&x| Scalar::Float(x)),
        }
    }
}

/// Naive loop-nest direct convolution. Each output element accumulates its
/// contributions row-major over the window, ascending channel first.
pub fn reference_convolution(layer: &LayerSpec, image: &MemoryImage) -> Result<OutputMap> {
    layer.validate()?;
    image.check(layer)?;
    let (oh, ow) = (layer.out_height(), layer.out_width());
    let (h, w) = (layer.in_height as isize, layer.in_width as isize);
    let (fh, fw) = (layer.filter_h, layer.filter_w);
    let (s, p) = (layer.stride as isize, layer.padding as isize);
    let n_out = layer.out_planes() * oh * ow;

    // (input plane, weight plane) pairs for each output plane
    let pairs = |plane: usize| -> Vec<(usize, usize)> {
        if layer.pass == Pass::BackwardWeight {
            vec![(plane % layer.in_channels, plane / layer.in_channels)]
        } else {
            (0..layer.in_channels)
                .map(|c| (c, plane * layer.in_channels + c))
                .collect()
        }
    };

    macro_rules! conv {
        ($x:expr, $wt:expr, $zero:expr, $ty:ty) => {{
            let mut out: Vec<$ty> = vec![$zero; n_out];
            for plane in 0..layer.out_planes() {
                let pp = pairs(plane);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = $zero;
                        for &(ic, wp) in &pp {
                            for r in 0..fh {
                                let mut row = $zero;
                                for c in 0..fw {
                                    let y = oy as isize * s + r as isize - p;
                                    let x = ox as isize * s + c as isize - p;
                                    if y < 0 || y >= h || x < 0 || x >= w {
                                        continue;
                                    }
                                    let xi = (ic * layer.in_height + y as usize) * layer.in_width
                                        + x as usize;
                                    let wi = (wp * fh + r) * fw + c;
                                    row += <$ty>::from($x[xi]) * <$ty>::from($wt[wi]);
                                }
                                acc += row;
                            }
                        }
                        out[(plane * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            out
        }};
    }

    match (&image.input, &image.weight) {
        (Values::Int(x), Values::Int(wt)) => Ok(OutputMap::Int(conv!(x, wt, 0i64, i64))),
        (Values::Float(x), Values::Float(wt)) => Ok(OutputMap::Float(conv!(x, wt, 0f32, f32))),
        _ => Err(Error::layer(&layer.name, "mixed arithmetic modes in memory image")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Comparison {
    Pass,
    Fail(String),
}

impl Comparison {
    pub fn passed(&self) -> bool {
        matches!(self, Comparison::Pass)
    }
}

/// Int32: bit-exact. Float32: `|a - b| <= 1e-5 * max(|a|, |b|, 1)` per element.
pub fn compare(sim: &OutputMap, reference: &OutputMap, mode: ArithMode) -> Comparison {
    if sim.len() != reference.len() {
        return Comparison::Fail(format!(
            "shape mismatch: {} simulated elements vs {} reference elements",
            sim.len(),
            reference.len()
        ));
    }
    match (sim, reference, mode) {
        (OutputMap::Int(a), OutputMap::Int(b), ArithMode::Int32) => {
            match a.iter().zip(b).position(|(x, y)| x != y) {
                None => Comparison::Pass,
                Some(i) => Comparison::Fail(format!(
                    "element {i}: simulated {} != reference {}",
                    a[i], b[i]
                )),
            }
        }
        (OutputMap::Float(a), OutputMap::Float(b), ArithMode::Float32) => {
            let bad = a.iter().zip(b).position(|(&x, &y)| {
                let scale = x.abs().max(y.abs()).max(1.0);
                let d = (x - y).abs();
                d.is_nan() || d > FLOAT_REL_TOL * scale
            });
            match bad {
                None => Comparison::Pass,
                Some(i) => Comparison::Fail(format!(
                    "element {i}: simulated {} vs reference {} exceeds relative tolerance",
                    a[i], b[i]
                )),
            }
        }
        _ => Comparison::Fail(format!("output maps are not both {}", mode.as_str())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{backward_specs, toy_layer};
    use proptest::prelude::*;

    /// Second naive implementation: scatter each input element into every
    /// output it touches, instead of gathering per output.
    fn scatter_conv(layer: &LayerSpec, x: &[i32], w: &[i32]) -> Vec<i64> {
        let (oh, ow) = (layer.out_height() as isize, layer.out_width() as isize);
        let mut out = vec![0i64; layer.out_planes() * (oh * ow) as usize];
        let s = layer.stride as isize;
        let p = layer.padding as isize;
        for plane in 0..layer.out_planes() {
            for ic in 0..layer.in_channels {
                let wp = match layer.pass {
                    Pass::BackwardWeight => {
                        if plane % layer.in_channels != ic {
                            continue;
                        }
                        plane / layer.in_channels
                    }
                    _ => plane * layer.in_channels + ic,
                };
                for y in 0..layer.in_height as isize {
                    for xx in 0..layer.in_width as isize {
                        let v = x[(ic * layer.in_height + y as usize) * layer.in_width + xx as usize] as i64;
                        for r in 0..layer.filter_h as isize {
                            for c in 0..layer.filter_w as isize {
                                let (ny, nx) = (y + p - r, xx + p - c);
                                if ny < 0 || nx < 0 || ny % s != 0 || nx % s != 0 {
                                    continue;
                                }
                                let (oy, ox) = (ny / s, nx / s);
                                if oy >= oh || ox >= ow {
                                    continue;
                                }
                                let wi = (wp * layer.filter_h + r as usize) * layer.filter_w + c as usize;
                                out[plane * (oh * ow) as usize + (oy * ow + ox) as usize] += v * w[wi] as i64;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let l = toy_layer();
        let img = MemoryImage::from_int((1..=16).collect(), vec![0; 9]);
        assert_eq!(reference_convolution(&l, &img).unwrap(), OutputMap::Int(vec![0; 4]));
    }

    #[test]
    fn illustrated_rows_contribute_minus_six() {
        // window rows 1 and 2 are [3,0,1] and [2,4,2]; filter rows 0 and 1 are
        // [-1,0,1] and [2,-2,0], filter row 2 zero; the window shifted down by
        // one pairs input row 1 with filter row 0 and input row 2 with filter row 1
        let l = LayerSpec::forward("w", 1, 1, 4, 3, 3, 3, 1, 0);
        let input = vec![9, 9, 9, 3, 0, 1, 2, 4, 2, 0, 0, 0];
        let weight = vec![-1, 0, 1, 2, -2, 0, 0, 0, 0];
        let out = reference_convolution(&l, &MemoryImage::from_int(input, weight)).unwrap();
        assert_eq!(out, OutputMap::Int(vec![3 * 2, -2 + -4]));
    }

    #[test]
    fn random_instance_matches_scatter_implementation() {
        let l = LayerSpec::forward("r", 2, 3, 8, 8, 3, 3, 1, 0);
        let img = MemoryImage::generate(&l, ArithMode::Int32, 7);
        let (Values::Int(x), Values::Int(w)) = (&img.input, &img.weight) else {
            unreachable!()
        };
        let expect = scatter_conv(&l, x, w);
        assert_eq!(reference_convolution(&l, &img).unwrap(), OutputMap::Int(expect));
    }

    #[test]
    fn backward_layers_match_scatter_implementation() {
        let l = LayerSpec::forward("b", 2, 3, 6, 6, 3, 3, 1, 1);
        for bl in backward_specs(&l).unwrap() {
            let img = MemoryImage::generate(&bl, ArithMode::Int32, 3);
            let (Values::Int(x), Values::Int(w)) = (&img.input, &img.weight) else {
                unreachable!()
            };
            assert_eq!(
                reference_convolution(&bl, &img).unwrap(),
                OutputMap::Int(scatter_conv(&bl, x, w)),
                "{}",
                bl.name
            );
        }
    }

    #[test]
    fn generation_is_seeded() {
        let l = toy_layer();
        let a = MemoryImage::generate(&l, ArithMode::Int32, 11);
        assert_eq!(a, MemoryImage::generate(&l, ArithMode::Int32, 11));
        assert_ne!(a, MemoryImage::generate(&l, ArithMode::Int32, 12));
        let Values::Int(v) = &a.input else { unreachable!() };
        assert!(v.iter().all(|x| (-8..=8).contains(x)));
    }

    #[test]
    fn image_shape_mismatch_is_an_error() {
        let img = MemoryImage::from_int(vec![1; 15], vec![1; 9]);
        assert!(reference_convolution(&toy_layer(), &img).is_err());
    }

    #[test]
    fn compare_cases() {
        let a = OutputMap::Int(vec![1, 2, 3]);
        assert!(compare(&a, &a, ArithMode::Int32).passed());
        let b = OutputMap::Int(vec![1, 3, 3]);
        match compare(&b, &a, ArithMode::Int32) {
            Comparison::Fail(msg) => assert!(msg.contains("element 1"), "{msg}"),
            Comparison::Pass => panic!("should fail"),
        }
        let f = OutputMap::Float(vec![1000.0, -2.5]);
        let g = OutputMap::Float(vec![1000.0 * (1.0 + 1e-7), -2.5 * (1.0 - 1e-7)]);
        assert!(compare(&g, &f, ArithMode::Float32).passed());
        let h = OutputMap::Float(vec![1000.0 * (1.0 + 1e-4), -2.5]);
        assert!(!compare(&h, &f, ArithMode::Float32).passed());
        assert!(!compare(&OutputMap::Int(vec![1]), &a, ArithMode::Int32).passed());
    }

    proptest! {
        #[test]
        fn convolution_is_linear_in_input(seed in 0u64..1000, k in -4i32..5) {
            let l = LayerSpec::forward("lin", 2, 2, 5, 5, 3, 2, 1, 1);
            let img = MemoryImage::generate(&l, ArithMode::Int32, seed);
            let Values::Int(x) = &img.input else { unreachable!() };
            let scaled = MemoryImage { input: Values::Int(x.iter().map(|v| v * k).collect()), ..img.clone() };
            let (OutputMap::Int(a), OutputMap::Int(b)) = (
                reference_convolution(&l, &img).unwrap(),
                reference_convolution(&l, &scaled).unwrap(),
            ) else { unreachable!() };
            prop_assert!(a.iter().zip(&b).all(|(&u, &v)| u * k as i64 == v));
        }
    }
}
