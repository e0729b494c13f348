//! Parameter names, shapes and initializers for every layer.

use super::config::{Branch, ModelConfig, FILTER_WIDTHS, MFSC_PLANES};
use super::params::{ParamKind, ParamStore};
use crate::autograd::init::{he_normal, normal, stream, xavier_uniform};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::text::Tag;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    He {
        fan_in: usize,
    },
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Normal {
        std: f64,
    },
    Zeros,
    Ones,
    /// Zeros except the forget-gate block, which is 1.
    LstmBias {
        units: usize,
    },
    /// Supplied by the caller (pre-trained word vectors).
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, kind: ParamKind, init: Init) -> Self {
        Self {
            name,
            shape,
            kind,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Draws the initial value from the stream named after the parameter, so
    /// a parameter's initial value does not depend on which other layers exist.
    pub fn initial_value(&self, seed: u64) -> Tensor {
        let mut rng = stream(seed, &format!("init/{}", self.name));
        match self.init {
            Init::He { fan_in } => he_normal(&self.shape, fan_in, &mut rng),
            Init::Xavier { fan_in, fan_out } => xavier_uniform(&self.shape, fan_in, fan_out, &mut rng),
            Init::Normal { std } => normal(&self.shape, std, &mut rng),
            Init::Zeros | Init::External => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::filled(&self.shape, 1.0),
            Init::LstmBias { units } => {
                let mut t = Tensor::zeros(&self.shape);
                t.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
                t
            }
        }
    }
}

fn bn(out: &mut Vec<ParamSpec>, prefix: &str, f: usize) {
    let p = |s: &str| format!("{prefix}/bn/{s}");
    out.push(ParamSpec::new(p("gamma"), vec![f], ParamKind::Trainable, Init::Ones));
    out.push(ParamSpec::new(p("beta"), vec![f], ParamKind::Trainable, Init::Zeros));
    out.push(ParamSpec::new(
        p("running_mean"),
        vec![f],
        ParamKind::Buffer,
        Init::Zeros,
    ));
    out.push(ParamSpec::new(p("running_var"), vec![f], ParamKind::Buffer, Init::Ones));
}

fn linear_bn(out: &mut Vec<ParamSpec>, prefix: &str, n: usize, m: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}/weight"),
        vec![n, m],
        ParamKind::Trainable,
        Init::He { fan_in: n },
    ));
    bn(out, prefix, m);
}

fn classifier(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig, n: usize) {
    let k = cfg.num_classes;
    out.push(ParamSpec::new(
        format!("{prefix}/weight"),
        vec![n, k],
        ParamKind::Trainable,
        Init::Normal { std: cfg.head_init_std },
    ));
    out.push(ParamSpec::new(
        format!("{prefix}/bias"),
        vec![k],
        ParamKind::Trainable,
        Init::Zeros,
    ));
}

fn text_branch(out: &mut Vec<ParamSpec>, cfg: &ModelConfig, branch: Branch, vocab_len: usize) {
    let p = branch.name();
    let nf = cfg.text_filters();
    let (rows, e, kind, init) = match branch {
        Branch::Word => (
            vocab_len.max(1),
            cfg.word_dim,
            if cfg.fine_tune_words {
                ParamKind::Trainable
            } else {
                ParamKind::Frozen
            },
            Init::External,
        ),
        _ => (
            Tag::ALL.len(),
            cfg.pos_dim,
            ParamKind::Trainable,
            Init::Xavier {
                fan_in: Tag::ALL.len(),
                fan_out: cfg.pos_dim,
            },
        ),
    };
    out.push(ParamSpec::new(format!("{p}/embedding"), vec![rows, e], kind, init));
    for w in FILTER_WIDTHS {
        out.push(ParamSpec::new(
            format!("{p}/conv{w}/kernel"),
            vec![w, e, 1, nf],
            ParamKind::Trainable,
            Init::He { fan_in: w * e },
        ));
        bn(out, &format!("{p}/conv{w}"), nf);
    }
}

fn mfsc_branch(out: &mut Vec<ParamSpec>, cfg: &ModelConfig) {
    let mut cin = MFSC_PLANES;
    for (i, c) in cfg.mfsc_channels().into_iter().enumerate() {
        let prefix = format!("mfsc/conv{}", i + 1);
        out.push(ParamSpec::new(
            format!("{prefix}/kernel"),
            vec![3, 3, cin, c],
            ParamKind::Trainable,
            Init::He { fan_in: 9 * cin },
        ));
        bn(out, &prefix, c);
        cin = c;
    }
    let flat = cfg.mfsc_flat();
    let f = cfg.branch_width();
    linear_bn(out, "mfsc/fc", flat, flat);
    linear_bn(out, "mfsc/dense", flat, f);
    for name in ["w_ih", "w_hh"] {
        out.push(ParamSpec::new(
            format!("mfsc/lstm/{name}"),
            vec![f, 4 * f],
            ParamKind::Trainable,
            Init::Xavier {
                fan_in: f,
                fan_out: 4 * f,
            },
        ));
    }
    out.push(ParamSpec::new(
        "mfsc/lstm/bias".into(),
        vec![4 * f],
        ParamKind::Trainable,
        Init::LstmBias { units: f },
    ));
}

/// Parameters of one feature-extraction branch.
pub fn branch_specs(cfg: &ModelConfig, branch: Branch, vocab_len: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match branch {
        Branch::Word | Branch::Pos => text_branch(&mut out, cfg, branch, vocab_len),
        Branch::Mfsc => mfsc_branch(&mut out, cfg),
        Branch::Lld => {
            let h = cfg.wide_hidden();
            linear_bn(&mut out, "lld/hidden1", cfg.lld_dim, h);
            linear_bn(&mut out, "lld/hidden2", h, cfg.branch_width());
        }
    }
    out
}

/// The fusion network over the active branches.
pub fn fusion_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let h = cfg.wide_hidden();
    linear_bn(&mut out, "fusion/hidden1", cfg.fusion_input(), h);
    linear_bn(&mut out, "fusion/hidden2", h, cfg.branch_width());
    classifier(&mut out, "fusion/output", cfg, cfg.branch_width());
    out
}

/// Auxiliary per-branch softmax head used by staged training.
pub fn aux_specs(cfg: &ModelConfig, branch: Branch) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    classifier(&mut out, &format!("aux/{}", branch.name()), cfg, cfg.branch_width());
    out
}

/// Every parameter of the model described by `cfg`.
pub fn model_specs(cfg: &ModelConfig, vocab_len: usize) -> Vec<ParamSpec> {
    let mut out: Vec<ParamSpec> = cfg
        .branches
        .iter()
        .flat_map(|b| branch_specs(cfg, b, vocab_len))
        .collect();
    out.extend(fusion_specs(cfg));
    out
}

/// Inserts freshly initialized parameters for `specs` into `store`.
/// `word_vectors` fills the word embedding table.
pub fn initialize(store: &mut ParamStore, specs: &[ParamSpec], seed: u64, word_vectors: Option<&Tensor>) -> Result<()> {
    for spec in specs {
        let value = if spec.init == Init::External {
            let given = word_vectors
                .ok_or_else(|| Error::InvalidArgument(format!("`{}` needs a word-vector table", spec.name)))?;
            if given.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    "initialize",
                    format!("`{}` expects {:?}, got {:?}", spec.name, spec.shape, given.shape()),
                ));
            }
            given.clone()
        } else {
            spec.initial_value(seed)
        };
        store.insert(spec.name.clone(), value, spec.kind);
    }
    Ok(())
}

/// Checks that `store` holds exactly the parameters of `specs` with matching
/// shapes.
pub fn check_store(store: &ParamStore, specs: &[ParamSpec]) -> Result<()> {
    for spec in specs {
        let t = store.tensor(&spec.name)?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {:?}, config expects {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    if store.len() != specs.len() {
        let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let extra: Vec<&str> = store.names().filter(|n| !known.contains(n)).collect();
        return Err(Error::Checkpoint(format!("unexpected parameters {extra:?}")));
    }
    Ok(())
}

/// Trainable scalar count of a spec list, excluding embedding tables.
pub fn trainable_count(specs: &[ParamSpec]) -> usize {
    specs
        .iter()
        .filter(|s| s.kind == ParamKind::Trainable && !s.name.ends_with("/embedding"))
        .map(ParamSpec::numel)
        .sum()
}
