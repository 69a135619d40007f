//! Line-oriented text checkpoints for networks.
//!
//! ```text
//! wganc-checkpoint 1
//! iteration 400
//! network generator
//! transform identity
//! activation tanh
//! dims 32 128 64
//! seed 17
//! weight 0
//! <one line per output unit, `in` values>
//! bias 0
//! <one line, `out` values>
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so
//! parsing a written checkpoint reproduces every parameter bit for bit.

use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::families::{CriticBank, InputTransform};
use crate::nn::{Activation, Layer, MlpParams, MlpSpec};

pub const MAGIC: &str = "wganc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unexpected end of checkpoint: {0}")]
    Truncated(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    /// `None` for networks that see the full input.
    pub transform: Option<InputTransform>,
    pub params: MlpParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Outer iterations completed when the checkpoint was taken.
    pub iteration: usize,
    pub networks: Vec<NamedNetwork>,
}

impl Checkpoint {
    /// The generator plus every critic of `bank`, named `critic0`, `critic1`, ...
    pub fn from_run(iteration: usize, generator: &MlpParams, bank: &CriticBank) -> Self {
        let mut networks = vec![NamedNetwork {
            name: "generator".into(),
            transform: None,
            params: generator.clone(),
        }];
        networks.extend(bank.entries().iter().enumerate().map(|(i, e)| NamedNetwork {
            name: format!("critic{i}"),
            transform: Some(e.transform),
            params: e.params.clone(),
        }));
        Self { iteration, networks }
    }

    pub fn get(&self, name: &str) -> Option<&NamedNetwork> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC} {VERSION}").unwrap();
        writeln!(s, "iteration {}", self.iteration).unwrap();
        for net in &self.networks {
            write_network(&mut s, net);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = Lines::new(text);
        let (n, first) = lines.next_line("header")?;
        if first != format!("{MAGIC} {VERSION}") {
            return Err(err(n, format!("expected header \"{MAGIC} {VERSION}\"")));
        }
        let (n, line) = lines.next_line("iteration")?;
        let iteration = keyword_usize(n, line, "iteration")?;
        let mut networks: Vec<NamedNetwork> = Vec::new();
        while let Some((n, line)) = lines.peek() {
            if !line.starts_with("network") {
                return Err(err(n, format!("expected \"network <name>\", found {line:?}")));
            }
            let net = parse_network(&mut lines)?;
            if networks.iter().any(|o| o.name == net.name) {
                return Err(err(n, format!("duplicate network {:?}", net.name)));
            }
            networks.push(net);
        }
        Ok(Self { iteration, networks })
    }
}

fn write_network(s: &mut String, net: &NamedNetwork) {
    writeln!(s, "network {}", net.name).unwrap();
    match net.transform {
        None => writeln!(s, "transform identity").unwrap(),
        Some(InputTransform::Prefix(i)) => writeln!(s, "transform prefix {i}").unwrap(),
        Some(InputTransform::Downsample(k)) => writeln!(s, "transform downsample {k}").unwrap(),
    }
    match net.params.spec.activation {
        Activation::Tanh => writeln!(s, "activation tanh").unwrap(),
        Activation::LeakyRelu(slope) => writeln!(s, "activation leaky_relu {slope:?}").unwrap(),
    }
    let dims: Vec<String> = net.params.spec.dims().iter().map(usize::to_string).collect();
    writeln!(s, "dims {}", dims.join(" ")).unwrap();
    writeln!(s, "seed {}", net.params.seed).unwrap();
    for (l, layer) in net.params.layers.iter().enumerate() {
        writeln!(s, "weight {l}").unwrap();
        let cols = layer.weight.shape()[1];
        for row in layer.weight.data().chunks_exact(cols) {
            write_row(s, row);
        }
        writeln!(s, "bias {l}").unwrap();
        write_row(s, layer.bias.data());
    }
    writeln!(s, "end").unwrap();
}

fn write_row(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").unwrap();
    }
    s.push('\n');
}

fn err(line: usize, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn skip_blank(&mut self) {
        while self.inner.next_if(|(_, l)| l.trim().is_empty()).is_some() {}
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        self.skip_blank();
        self.inner.peek().map(|&(i, l)| (i + 1, l.trim()))
    }

    fn next_line(&mut self, expecting: &str) -> Result<(usize, &'a str), CheckpointError> {
        self.skip_blank();
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| CheckpointError::Truncated(format!("expected {expecting}")))
    }
}

fn keyword_rest<'a>(n: usize, line: &'a str, key: &str) -> Result<&'a str, CheckpointError> {
    match line.split_once(' ') {
        Some((k, rest)) if k == key => Ok(rest.trim()),
        _ => Err(err(n, format!("expected \"{key} ...\", found {line:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(n: usize, field: &str) -> Result<T, CheckpointError> {
    field
        .parse()
        .map_err(|_| err(n, format!("invalid number {field:?}")))
}

fn keyword_usize(n: usize, line: &str, key: &str) -> Result<usize, CheckpointError> {
    parse_num(n, keyword_rest(n, line, key)?)
}

fn parse_row(n: usize, line: &str, expected: usize) -> Result<Vec<f64>, CheckpointError> {
    let values = line
        .split_ascii_whitespace()
        .map(|f| parse_num::<f64>(n, f))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(err(n, format!("expected {expected} values, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err(n, "non-finite value"));
    }
    Ok(values)
}

fn parse_network(lines: &mut Lines<'_>) -> Result<NamedNetwork, CheckpointError> {
    let (n, line) = lines.next_line("network")?;
    let name = keyword_rest(n, line, "network")?;
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(err(n, "network name must be a single word"));
    }
    let name = name.to_string();

    let (n, line) = lines.next_line("transform")?;
    let parts: Vec<&str> = keyword_rest(n, line, "transform")?
        .split_ascii_whitespace()
        .collect();
    let transform = match parts.as_slice() {
        ["identity"] => None,
        ["prefix", i] => Some(InputTransform::Prefix(parse_num(n, i)?)),
        ["downsample", k] => Some(InputTransform::Downsample(parse_num(n, k)?)),
        _ => return Err(err(n, format!("unknown transform {line:?}"))),
    };

    let (n, line) = lines.next_line("activation")?;
    let activation = match keyword_rest(n, line, "activation")?
        .split_ascii_whitespace()
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["tanh"] => Activation::Tanh,
        ["leaky_relu", s] => Activation::LeakyRelu(parse_num(n, s)?),
        _ => return Err(err(n, format!("unknown activation {line:?}"))),
    };

    let (n, line) = lines.next_line("dims")?;
    let dims = keyword_rest(n, line, "dims")?
        .split_ascii_whitespace()
        .map(|d| parse_num::<usize>(n, d))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.len() < 2 {
        return Err(err(n, "dims needs at least input and output widths"));
    }
    let spec = MlpSpec::new(
        dims[0],
        dims[1..dims.len() - 1].to_vec(),
        dims[dims.len() - 1],
        activation,
    )
    .map_err(|e| err(n, e.to_string()))?;

    let (n, line) = lines.next_line("seed")?;
    let seed: u64 = parse_num(n, keyword_rest(n, line, "seed")?)?;

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let (n, line) = lines.next_line("weight")?;
        if keyword_usize(n, line, "weight")? != l {
            return Err(err(n, format!("expected weight {l}")));
        }
        let mut weight = Vec::new();
        for _ in 0..fan_out {
            let (n, line) = lines.next_line("weight row")?;
            if line.starts_with("bias") {
                return Err(err(n, format!("weight {l} needs {fan_out} rows")));
            }
            weight.extend(parse_row(n, line, fan_in)?);
        }
        let (n, line) = lines.next_line("bias")?;
        if keyword_usize(n, line, "bias")? != l {
            return Err(err(n, format!("expected bias {l}")));
        }
        let (n, line) = lines.next_line("bias row")?;
        let bias = parse_row(n, line, fan_out)?;
        layers.push(Layer {
            weight: Tensor::new(vec![fan_out, fan_in], weight).map_err(|e| err(n, e.to_string()))?,
            bias: Tensor::new(vec![fan_out], bias).map_err(|e| err(n, e.to_string()))?,
        });
    }
    let (n, line) = lines.next_line("end")?;
    if line != "end" {
        return Err(err(n, format!("expected \"end\", found {line:?}")));
    }
    let params = MlpParams::from_layers(spec, seed, layers).map_err(|e| err(n, e.to_string()))?;
    Ok(NamedNetwork {
        name,
        transform,
        params,
    })
}
