use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::ConvGeometry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Real-valued stem convolution followed by batch norm.
    FirstConvFp32 {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// 3×3 and 1×1 binary convolutions with identity shortcuts; shape-preserving.
    BinaryBlockNormal { channels: usize },
    /// Optionally strided 3×3 binary conv (average-pooled shortcut), then
    /// `out/in` parallel 1×1 branches concatenated to widen the channels.
    BinaryBlockReduction {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    GlobalPool,
    FcHead { classes: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::FirstConvFp32 { .. } => "first_conv_fp32",
            LayerSpec::BinaryBlockNormal { .. } => "binary_block_normal",
            LayerSpec::BinaryBlockReduction { .. } => "binary_block_reduction",
            LayerSpec::GlobalPool => "global_pool",
            LayerSpec::FcHead { .. } => "fc_head",
        }
    }

    /// Geometry of the layer's 3×3 (or stem) convolution.
    pub fn main_conv(&self, in_channels: usize) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::FirstConvFp32 {
                out_channels,
                kernel,
                stride,
                padding,
            } => Some(ConvGeometry::square(in_channels, out_channels, kernel, stride, padding)),
            LayerSpec::BinaryBlockNormal { channels } => Some(ConvGeometry::square(channels, channels, 3, 1, 1)),
            LayerSpec::BinaryBlockReduction { in_channels, stride, .. } => {
                Some(ConvGeometry::square(in_channels, in_channels, 3, stride, 1))
            }
            _ => None,
        }
    }
}

/// Activation shape (channels, height, width) of a single sample.
pub type Chw = [usize; 3];

/// Ordered architecture description shared by the model, trainer and cost model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Chw,
    pub layers: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub class_count: usize,
}

const HEADER: &str = "reactxgb-net v1";

impl NetworkSpec {
    /// Default FashionMNIST backbone: 64-channel stride-2 stem, then a
    /// 64→128→256→512(×5)→1024 binary block stack ending at 2×2.
    pub fn reference() -> Self {
        Self::scaled_reference(1)
    }

    /// The reference stack with every width divided by two.
    pub fn reference_half() -> Self {
        Self::scaled_reference(2)
    }

    fn scaled_reference(div: usize) -> Self {
        use LayerSpec::*;
        let w = |c: usize| c / div;
        let mut layers = vec![
            FirstConvFp32 {
                out_channels: w(64),
                kernel: 3,
                stride: 2,
                padding: 2,
            },
            BinaryBlockNormal { channels: w(64) },
            BinaryBlockReduction {
                in_channels: w(64),
                out_channels: w(128),
                stride: 2,
            },
            BinaryBlockNormal { channels: w(128) },
            BinaryBlockReduction {
                in_channels: w(128),
                out_channels: w(256),
                stride: 2,
            },
            BinaryBlockNormal { channels: w(256) },
            BinaryBlockReduction {
                in_channels: w(256),
                out_channels: w(512),
                stride: 2,
            },
        ];
        layers.extend(std::iter::repeat(BinaryBlockNormal { channels: w(512) }).take(5));
        layers.push(BinaryBlockReduction {
            in_channels: w(512),
            out_channels: w(1024),
            stride: 1,
        });
        layers.push(BinaryBlockNormal { channels: w(1024) });
        layers.push(GlobalPool);
        layers.push(FcHead { classes: 10 });
        NetworkSpec {
            input: [1, 28, 28],
            layers,
            feature_dim: w(1024),
            class_count: 10,
        }
    }

    /// Resolves `reference`, `reference-half`, or reads a spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "reference" => Ok(Self::reference()),
            "reference-half" => Ok(Self::reference_half()),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::parse(&text)
            }
        }
    }

    pub fn has_head(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::FcHead { .. }))
    }

    pub fn without_head(&self) -> Self {
        let mut s = self.clone();
        s.layers.retain(|l| !matches!(l, LayerSpec::FcHead { .. }));
        s
    }

    pub fn with_head(&self) -> Self {
        let mut s = self.without_head();
        s.layers.push(LayerSpec::FcHead {
            classes: self.class_count,
        });
        s
    }

    /// Validates layer ordering and the shape chain; returns the input shape
    /// of every layer plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Chw>> {
        let err = |i: usize, msg: String| Error::Spec(format!("layer {}: {}", i, msg));
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Spec(format!("input shape {:?} has a zero extent", self.input)));
        }
        if !matches!(self.layers.first(), Some(LayerSpec::FirstConvFp32 { .. })) {
            return Err(err(0, "the first layer must be first_conv_fp32".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input;
        let mut pooled = false;
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(cur);
            let [c, h, w] = cur;
            cur = match *layer {
                LayerSpec::FirstConvFp32 { out_channels, .. } => {
                    if i != 0 {
                        return Err(err(i, "first_conv_fp32 may only appear first".into()));
                    }
                    if out_channels == 0 {
                        return Err(err(i, "zero output channels".into()));
                    }
                    let g = layer.main_conv(c).expect("conv layer");
                    let (ho, wo) = g.out_hw(h, w).map_err(|e| err(i, e.to_string()))?;
                    [out_channels, ho, wo]
                }
                LayerSpec::BinaryBlockNormal { channels } => {
                    if pooled {
                        return Err(err(i, "binary block after global_pool".into()));
                    }
                    if channels != c {
                        return Err(err(i, format!("block expects {} channels, receives {}", channels, c)));
                    }
                    cur
                }
                LayerSpec::BinaryBlockReduction {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    if pooled {
                        return Err(err(i, "binary block after global_pool".into()));
                    }
                    if in_channels != c {
                        return Err(err(i, format!("block expects {} channels, receives {}", in_channels, c)));
                    }
                    if in_channels == 0 || out_channels % in_channels != 0 || out_channels < in_channels {
                        return Err(err(
                            i,
                            format!("out channels {} must be a positive multiple of {}", out_channels, in_channels),
                        ));
                    }
                    if !(stride == 1 || stride == 2) {
                        return Err(err(i, format!("stride {} must be 1 or 2", stride)));
                    }
                    if stride == 1 && out_channels == in_channels {
                        return Err(err(i, "reduction block neither strides nor widens".into()));
                    }
                    let g = layer.main_conv(c).expect("conv layer");
                    let (ho, wo) = g.out_hw(h, w).map_err(|e| err(i, e.to_string()))?;
                    [out_channels, ho, wo]
                }
                LayerSpec::GlobalPool => {
                    if pooled {
                        return Err(err(i, "second global_pool".into()));
                    }
                    if c != self.feature_dim {
                        return Err(err(
                            i,
                            format!("feature_dim {} but {} channels enter global_pool", self.feature_dim, c),
                        ));
                    }
                    pooled = true;
                    [c, 1, 1]
                }
                LayerSpec::FcHead { classes } => {
                    if i + 1 != self.layers.len() {
                        return Err(err(i, "fc_head must be the last layer".into()));
                    }
                    if !pooled {
                        return Err(err(i, "fc_head requires a preceding global_pool".into()));
                    }
                    if classes != self.class_count {
                        return Err(err(i, format!("fc_head has {} classes, spec has {}", classes, self.class_count)));
                    }
                    [classes, 1, 1]
                }
            };
        }
        if !pooled {
            return Err(Error::Spec("missing global_pool".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Spec("class_count must be at least 2".into()));
        }
        shapes.push(cur);
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", HEADER);
        let _ = writeln!(s, "input {} {} {}", self.input[0], self.input[1], self.input[2]);
        let _ = writeln!(s, "classes {}", self.class_count);
        let _ = writeln!(s, "features {}", self.feature_dim);
        for l in &self.layers {
            let _ = match *l {
                LayerSpec::FirstConvFp32 {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => writeln!(s, "first_conv {} kernel={} stride={} pad={}", out_channels, kernel, stride, padding),
                LayerSpec::BinaryBlockNormal { channels } => writeln!(s, "normal {}", channels),
                LayerSpec::BinaryBlockReduction {
                    in_channels,
                    out_channels,
                    stride,
                } => writeln!(s, "reduction {} {} stride={}", in_channels, out_channels, stride),
                LayerSpec::GlobalPool => writeln!(s, "global_pool"),
                LayerSpec::FcHead { classes } => writeln!(s, "fc_head {}", classes),
            };
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: &str| Error::format("network spec", format!("line {}", line), msg);
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            Some((n, _)) => return Err(bad(n, &format!("expected header '{}'", HEADER))),
            None => return Err(bad(0, "empty spec")),
        }
        let mut input = None;
        let mut classes = None;
        let mut features = None;
        let mut layers = Vec::new();
        for (n, line) in lines {
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap_or("");
            let mut positional = Vec::new();
            let mut named = Vec::new();
            for t in tok {
                match t.split_once('=') {
                    Some((k, v)) => named.push((k, v)),
                    None => positional.push(t),
                }
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, &format!("'{}' is not a count", s)));
            let pos = |i: usize| -> Result<usize> {
                positional
                    .get(i)
                    .ok_or_else(|| bad(n, &format!("'{}' needs {} positional values", head, i + 1)))
                    .and_then(|s| num(s))
            };
            let key = |k: &str, default: Option<usize>| -> Result<usize> {
                match named.iter().find(|(kk, _)| *kk == k) {
                    Some((_, v)) => num(v),
                    None => default.ok_or_else(|| bad(n, &format!("'{}' needs {}=", head, k))),
                }
            };
            for (k, _) in &named {
                let allowed: &[&str] = match head {
                    "first_conv" => &["kernel", "stride", "pad"],
                    "reduction" => &["stride"],
                    _ => &[],
                };
                if !allowed.contains(k) {
                    return Err(bad(n, &format!("unknown key '{}' for '{}'", k, head)));
                }
            }
            match head {
                "input" => input = Some([pos(0)?, pos(1)?, pos(2)?]),
                "classes" => classes = Some(pos(0)?),
                "features" => features = Some(pos(0)?),
                "first_conv" => layers.push(LayerSpec::FirstConvFp32 {
                    out_channels: pos(0)?,
                    kernel: key("kernel", Some(3))?,
                    stride: key("stride", Some(1))?,
                    padding: key("pad", Some(1))?,
                }),
                "normal" => layers.push(LayerSpec::BinaryBlockNormal { channels: pos(0)? }),
                "reduction" => layers.push(LayerSpec::BinaryBlockReduction {
                    in_channels: pos(0)?,
                    out_channels: pos(1)?,
                    stride: key("stride", Some(2))?,
                }),
                "global_pool" => layers.push(LayerSpec::GlobalPool),
                "fc_head" => layers.push(LayerSpec::FcHead { classes: pos(0)? }),
                other => return Err(bad(n, &format!("unknown directive '{}'", other))),
            }
        }
        let spec = NetworkSpec {
            input: input.ok_or_else(|| bad(0, "missing 'input'"))?,
            layers,
            feature_dim: features.ok_or_else(|| bad(0, "missing 'features'"))?,
            class_count: classes.ok_or_else(|| bad(0, "missing 'classes'"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chains_down_to_two_by_two() {
        let s = NetworkSpec::reference();
        let shapes = s.shapes().unwrap();
        assert_eq!(shapes[1], [64, 15, 15]);
        assert_eq!(shapes[3], [128, 8, 8]);
        let pool_in = shapes[s.layers.len() - 2];
        assert_eq!(pool_in, [1024, 2, 2]);
        assert_eq!(*shapes.last().unwrap(), [10, 1, 1]);
        assert_eq!(NetworkSpec::reference_half().feature_dim, 512);
    }

    #[test]
    fn text_round_trip() {
        for s in [NetworkSpec::reference(), NetworkSpec::reference_half().without_head()] {
            assert_eq!(NetworkSpec::parse(&s.to_text()).unwrap(), s);
        }
    }

    #[test]
    fn chain_violation_names_layer() {
        let mut s = NetworkSpec::reference();
        s.layers[3] = LayerSpec::BinaryBlockNormal { channels: 96 };
        let e = s.validate().unwrap_err().to_string();
        assert!(e.contains("layer 3"), "{}", e);
    }

    #[test]
    fn ordering_rules() {
        let mut s = NetworkSpec::reference();
        s.layers.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::reference();
        s.layers.insert(3, LayerSpec::FcHead { classes: 10 });
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::reference();
        s.feature_dim = 512;
        assert!(s.validate().is_err());
        assert!(NetworkSpec::reference().without_head().validate().is_ok());
    }

    #[test]
    fn parse_rejects_unknown_directive() {
        let text = format!("{}\ninput 1 28 28\nclasses 10\nfeatures 8\nbogus 3\n", HEADER);
        let e = NetworkSpec::parse(&text).unwrap_err().to_string();
        assert!(e.contains("line 5"), "{}", e);
    }
}
