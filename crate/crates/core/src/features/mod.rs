//! Encoder-decoder feature extractors: four small U-Nets (template/source
//! crossed with rotation/translation phase), each mapping a grayscale image
//! to a positive single-channel feature map of the same size.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which of the four extractor slots a network fills.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    TemplateRot,
    SourceRot,
    TemplateTrans,
    SourceTrans,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::TemplateRot,
        Role::SourceRot,
        Role::TemplateTrans,
        Role::SourceTrans,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Role::TemplateRot => "template-rot",
            Role::SourceRot => "source-rot",
            Role::TemplateTrans => "template-trans",
            Role::SourceTrans => "source-trans",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Role> {
        Role::ALL.iter().copied().find(|r| r.tag() == tag)
    }
}

/// Output nonlinearity keeping features positive.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum HeadKind {
    #[default]
    Sigmoid,
    Relu,
    Softplus,
}

impl HeadKind {
    pub fn tag(self) -> &'static str {
        match self {
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::Relu => "relu",
            HeadKind::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<HeadKind> {
        [HeadKind::Sigmoid, HeadKind::Relu, HeadKind::Softplus]
            .into_iter()
            .find(|h| h.tag() == tag)
    }
}

/// Network shape: `depth` encoder blocks (conv+ReLU+2x pool) mirrored by
/// `depth` decoder blocks (2x upsample + skip concat + conv+ReLU), then a
/// 1x1 head. Channel widths double per encoder level.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Topology {
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub head: HeadKind,
}

/// One conv layer: `cout x cin x k x k` weights plus `cout` biases.
#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Topology {
    pub fn new(depth: usize, base_channels: usize, input_size: usize) -> Self {
        Topology {
            depth,
            base_channels,
            input_size,
            head: HeadKind::Sigmoid,
        }
    }

    fn enc_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn layers(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        for d in 0..self.depth {
            let cin = if d == 0 { 1 } else { self.enc_channels(d - 1) };
            specs.push(ConvSpec {
                name: format!("enc{d}"),
                cin,
                cout: self.enc_channels(d),
                k: 3,
            });
        }
        for d in (0..self.depth).rev() {
            // upsampled bottom/decoder channels concatenated with the skip
            let carried = if d == self.depth - 1 {
                self.enc_channels(self.depth - 1)
            } else {
                self.enc_channels(d)
            };
            let cin = carried + self.enc_channels(d);
            let cout = if d == 0 {
                self.base_channels
            } else {
                self.enc_channels(d - 1)
            };
            specs.push(ConvSpec {
                name: format!("dec{d}"),
                cin,
                cout,
                k: 3,
            });
        }
        specs.push(ConvSpec {
            name: "head".into(),
            cin: self.base_channels,
            cout: 1,
            k: 1,
        });
        specs
    }

    /// Total learnable scalars (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.cout * l.cin * l.k * l.k + l.cout)
            .sum()
    }

    /// Canonical one-line descriptor, stable across versions; parsed back by
    /// checkpoint loading.
    pub fn descriptor(&self) -> String {
        format!(
            "depth={} base_channels={} input_size={} head={}",
            self.depth,
            self.base_channels,
            self.input_size,
            self.head.tag()
        )
    }

    pub fn from_descriptor(s: &str) -> Result<Topology> {
        let mut depth = None;
        let mut base = None;
        let mut size = None;
        let mut head = None;
        for part in s.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::InvalidArgument {
                op: "Topology::from_descriptor",
                msg: format!("bad field '{part}'"),
            })?;
            match k {
                "depth" => depth = v.parse().ok(),
                "base_channels" => base = v.parse().ok(),
                "input_size" => size = v.parse().ok(),
                "head" => head = HeadKind::from_tag(v),
                _ => {}
            }
        }
        match (depth, base, size, head) {
            (Some(depth), Some(base_channels), Some(input_size), Some(head)) => Ok(Topology {
                depth,
                base_channels,
                input_size,
                head,
            }),
            _ => Err(Error::InvalidArgument {
                op: "Topology::from_descriptor",
                msg: format!("unparseable topology '{s}'"),
            }),
        }
    }
}

/// A feature extractor: topology plus ordered named parameter tensors.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Scalar> {
    pub topology: Topology,
    pub role: Role,
    params: Vec<(String, Tensor<T>)>,
}

/// Tape bindings for one extractor's parameters.
pub struct BoundExtractor {
    vars: Vec<Var>,
}

impl BoundExtractor {
    /// Bound parameter nodes, in the extractor's parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Deterministic fan-in-scaled uniform initialization; biases start at
    /// zero so an all-zero input yields sigmoid(0) = 0.5 everywhere.
    pub fn init(topology: &Topology, role: Role, seed: u64) -> Result<Self> {
        if topology.depth < 1 || topology.base_channels < 1 {
            return Err(Error::InvalidArgument {
                op: "FeatureExtractor::init",
                msg: format!(
                    "depth and base_channels must be >= 1, got {} / {}",
                    topology.depth, topology.base_channels
                ),
            });
        }
        if topology.input_size % (1 << topology.depth) != 0 {
            return Err(Error::InvalidArgument {
                op: "FeatureExtractor::init",
                msg: format!(
                    "input size {} not divisible by 2^depth = {}",
                    topology.input_size,
                    1 << topology.depth
                ),
            });
        }
        let role_salt = crate::config::fnv1a64(role.tag().as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ role_salt);
        let mut params = Vec::new();
        for layer in topology.layers() {
            let fan_in = layer.cin * layer.k * layer.k;
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = layer.cout * layer.cin * layer.k * layer.k;
            let w: Vec<T> = (0..n)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect();
            params.push((
                format!("{}.w", layer.name),
                Tensor::from_vec(&[layer.cout, layer.cin, layer.k, layer.k], w)?,
            ));
            params.push((format!("{}.b", layer.name), Tensor::zeros(&[layer.cout])));
        }
        Ok(FeatureExtractor {
            topology: topology.clone(),
            role,
            params,
        })
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<(String, Tensor<T>)> {
        &mut self.params
    }

    pub fn from_params(
        topology: Topology,
        role: Role,
        params: Vec<(String, Tensor<T>)>,
    ) -> Result<Self> {
        let expect: Vec<String> = topology
            .layers()
            .iter()
            .flat_map(|l| [format!("{}.w", l.name), format!("{}.b", l.name)])
            .collect();
        let got: Vec<&String> = params.iter().map(|(n, _)| n).collect();
        if expect.len() != got.len() || expect.iter().zip(&got).any(|(a, b)| &a != b) {
            return Err(Error::InvalidArgument {
                op: "FeatureExtractor::from_params",
                msg: format!("parameter records {got:?} do not match topology"),
            });
        }
        Ok(FeatureExtractor {
            topology,
            role,
            params,
        })
    }

    /// Register all parameters on a tape. Trainable bindings are leaves that
    /// collect gradients; frozen bindings are constants.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> BoundExtractor {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundExtractor { vars }
    }

    /// Encoder-decoder forward pass; returns a positive [H,W] feature map.
    pub fn forward(&self, tape: &Tape<T>, bound: &BoundExtractor, image: Var) -> Result<Var> {
        let (h, w) = tape.value(image).dims2()?;
        if h != self.topology.input_size || w != self.topology.input_size {
            return Err(Error::InvalidArgument {
                op: "FeatureExtractor::forward",
                msg: format!(
                    "input {}x{} does not match configured size {}",
                    h, w, self.topology.input_size
                ),
            });
        }
        let d = self.topology.depth;
        let mut var_ix = 0;
        let mut next = || {
            let pair = (bound.vars[var_ix], bound.vars[var_ix + 1]);
            var_ix += 2;
            pair
        };
        let mut cur = tape.reshape(image, &[1, h, w])?;
        let mut skips = Vec::with_capacity(d);
        for _ in 0..d {
            let (wt, b) = next();
            cur = tape.relu(tape.conv2d(cur, wt, Some(b), 1, 1)?);
            skips.push(cur);
            cur = tape.avgpool2(cur)?;
        }
        for level in (0..d).rev() {
            let (wt, b) = next();
            cur = tape.upsample2x(cur)?;
            cur = tape.concat_channels(cur, skips[level])?;
            cur = tape.relu(tape.conv2d(cur, wt, Some(b), 1, 1)?);
        }
        let (wt, b) = next();
        let pre = tape.conv2d(cur, wt, Some(b), 1, 0)?;
        let act = match self.topology.head {
            HeadKind::Sigmoid => tape.sigmoid(pre),
            HeadKind::Relu => tape.relu(pre),
            HeadKind::Softplus => {
                let e = tape.exp(pre);
                tape.ln(tape.add_scalar_const(e, T::one()))
            }
        };
        tape.reshape(act, &[h, w])
    }

    /// Convenience: bind frozen and run forward in one call.
    pub fn apply(&self, tape: &Tape<T>, image: Var) -> Result<Var> {
        let bound = self.bind(tape, false);
        self.forward(tape, &bound, image)
    }
}

/// The four extractors of the two-phase estimator.
#[derive(Clone, Debug)]
pub struct ExtractorSet<T: Scalar> {
    pub template_rot: FeatureExtractor<T>,
    pub source_rot: FeatureExtractor<T>,
    pub template_trans: FeatureExtractor<T>,
    pub source_trans: FeatureExtractor<T>,
}

impl<T: Scalar> ExtractorSet<T> {
    pub fn init(topology: &Topology, seed: u64) -> Result<Self> {
        Ok(ExtractorSet {
            template_rot: FeatureExtractor::init(topology, Role::TemplateRot, seed)?,
            source_rot: FeatureExtractor::init(topology, Role::SourceRot, seed)?,
            template_trans: FeatureExtractor::init(topology, Role::TemplateTrans, seed)?,
            source_trans: FeatureExtractor::init(topology, Role::SourceTrans, seed)?,
        })
    }

    pub fn get(&self, role: Role) -> &FeatureExtractor<T> {
        match role {
            Role::TemplateRot => &self.template_rot,
            Role::SourceRot => &self.source_rot,
            Role::TemplateTrans => &self.template_trans,
            Role::SourceTrans => &self.source_trans,
        }
    }

    pub fn get_mut(&mut self, role: Role) -> &mut FeatureExtractor<T> {
        match role {
            Role::TemplateRot => &mut self.template_rot,
            Role::SourceRot => &mut self.source_rot,
            Role::TemplateTrans => &mut self.template_trans,
            Role::SourceTrans => &mut self.source_trans,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.template_rot.topology
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let topo = Topology::new(2, 4, 32);
        let a = FeatureExtractor::<f64>::init(&topo, Role::TemplateRot, 7).unwrap();
        let b = FeatureExtractor::<f64>::init(&topo, Role::TemplateRot, 7).unwrap();
        for ((_, ta), (_, tb)) in a.params().iter().zip(b.params()) {
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn roles_draw_independently() {
        let topo = Topology::new(1, 2, 16);
        let a = FeatureExtractor::<f64>::init(&topo, Role::TemplateRot, 7).unwrap();
        let b = FeatureExtractor::<f64>::init(&topo, Role::SourceRot, 7).unwrap();
        assert_ne!(a.params()[0].1, b.params()[0].1);
    }

    #[test]
    fn descriptor_round_trip() {
        let topo = Topology::new(3, 8, 128);
        let back = Topology::from_descriptor(&topo.descriptor()).unwrap();
        assert_eq!(topo, back);
    }

    #[test]
    fn output_shape_and_range() {
        let topo = Topology::new(2, 2, 16);
        let fx = FeatureExtractor::<f64>::init(&topo, Role::TemplateRot, 3).unwrap();
        let tape = Tape::new();
        let img = tape.constant(Tensor::filled(&[16, 16], 0.3));
        let y = fx.apply(&tape, img).unwrap();
        let yv = tape.value_clone(y);
        assert_eq!(yv.shape(), &[16, 16]);
        assert!(yv.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_input_zero_bias_gives_half() {
        let topo = Topology::new(2, 2, 16);
        let fx = FeatureExtractor::<f64>::init(&topo, Role::SourceTrans, 11).unwrap();
        let tape = Tape::new();
        let img = tape.constant(Tensor::zeros(&[16, 16]));
        let y = fx.apply(&tape, img).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input_size() {
        let topo = Topology::new(2, 2, 16);
        let fx = FeatureExtractor::<f64>::init(&topo, Role::TemplateRot, 3).unwrap();
        let tape = Tape::new();
        let img = tape.constant(Tensor::zeros(&[8, 8]));
        assert!(fx.apply(&tape, img).is_err());
    }

    #[test]
    fn paper_scale_parameter_count_matches_closed_form() {
        // depth 4, base 8, 256x256: sum over layers of cout*cin*9 (+cout),
        // computed independently of Topology::layers().
        let topo = Topology::new(4, 8, 256);
        let enc = |cin: usize, cout: usize| cout * cin * 9 + cout;
        let head = 8 + 1;
        let want = enc(1, 8)
            + enc(8, 16)
            + enc(16, 32)
            + enc(32, 64)
            + enc(64 + 64, 32)
            + enc(32 + 32, 16)
            + enc(16 + 16, 8)
            + enc(8 + 8, 8)
            + head;
        assert_eq!(topo.param_count(), want);
    }
}
