use std::fmt;
use std::str::FromStr;

use crate::ModelError;

/// Where the constraint prompt joins the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PromptPosition {
    #[default]
    Global,
    Sparse,
}

/// Attention normalizer of the sparse branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SparseFunction {
    /// Top-k on the logits with `-inf` fill, then one softmax.
    #[default]
    TopK,
    /// Softmax, zero outside the top-k, softmax again.
    TopKLiteral,
    Softmax,
    Sparsemax,
    Entmax15,
}

impl fmt::Display for PromptPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptPosition::Global => "global",
            PromptPosition::Sparse => "sparse",
        })
    }
}

impl FromStr for PromptPosition {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "global" => Ok(Self::Global),
            "sparse" => Ok(Self::Sparse),
            _ => Err(ModelError::Config(format!("unknown prompt position `{s}`"))),
        }
    }
}

impl fmt::Display for SparseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SparseFunction::TopK => "topk",
            SparseFunction::TopKLiteral => "topk-literal",
            SparseFunction::Softmax => "softmax",
            SparseFunction::Sparsemax => "sparsemax",
            SparseFunction::Entmax15 => "entmax15",
        })
    }
}

impl FromStr for SparseFunction {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "topk" => Ok(Self::TopK),
            "topk-literal" => Ok(Self::TopKLiteral),
            "softmax" => Ok(Self::Softmax),
            "sparsemax" => Ok(Self::Sparsemax),
            "entmax15" => Ok(Self::Entmax15),
            _ => Err(ModelError::Config(format!("unknown sparse function `{s}`"))),
        }
    }
}

/// Sparse-branch top-k, fixed or as a fraction of the customer count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopK {
    /// `ceil(n / d)`.
    Fraction(usize),
    Fixed(usize),
}

impl TopK {
    pub fn for_customers(self, n: usize) -> usize {
        match self {
            TopK::Fraction(d) => n.div_ceil(d.max(1)),
            TopK::Fixed(k) => k,
        }
        .max(1)
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::Fraction(d) => write!(f, "n/{d}"),
            TopK::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for TopK {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::Config(format!("bad top-k `{s}`, expected a count or n/<divisor>"));
        let v = match s.trim().strip_prefix("n/") {
            Some(d) => TopK::Fraction(d.trim().parse().map_err(|_| bad())?),
            None if s.trim() == "auto" => TopK::Fraction(2),
            None => TopK::Fixed(s.trim().parse().map_err(|_| bad())?),
        };
        match v {
            TopK::Fraction(0) | TopK::Fixed(0) => Err(bad()),
            v => Ok(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the gated feed-forward blocks.
    pub d_ff: usize,
    pub k: TopK,
    /// Logit clipping.
    pub xi: f64,
    pub prompt_position: PromptPosition,
    pub sparse_function: SparseFunction,
    /// When false the prompt input is all zeros, so the encoder cannot
    /// tell variants apart.
    pub use_prompt: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 128,
            heads: 8,
            layers: 6,
            d_ff: 512,
            k: TopK::Fraction(2),
            xi: 10.0,
            prompt_position: PromptPosition::Global,
            sparse_function: SparseFunction::TopK,
            use_prompt: true,
        }
    }
}

impl ModelConfig {
    /// Small model used for desk-scale training.
    pub fn desk() -> Self {
        Self {
            d_h: 64,
            heads: 4,
            layers: 3,
            d_ff: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_h == 0 || self.heads == 0 || self.d_h % self.heads != 0 {
            return bad("d_h must be a positive multiple of heads");
        }
        if self.layers == 0 || self.d_ff == 0 {
            return bad("layers and d_ff must be positive");
        }
        if matches!(self.k, TopK::Fraction(0) | TopK::Fixed(0)) {
            return bad("k must be at least 1");
        }
        if !(self.xi > 0.0) {
            return bad("xi must be positive");
        }
        Ok(())
    }

    /// Top-k used for an instance with `n` customers.
    pub fn k_for(&self, n: usize) -> usize {
        self.k.for_customers(n)
    }

    pub fn to_sidecar(&self) -> String {
        format!(
            "d_h = {}\nheads = {}\nlayers = {}\nd_ff = {}\nk = {}\nxi = {}\nprompt_position = {}\nsparse_function = {}\nuse_prompt = {}\n",
            self.d_h, self.heads, self.layers, self.d_ff, self.k, self.xi, self.prompt_position, self.sparse_function, self.use_prompt
        )
    }

    /// Applies one `key = value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let num = |v: &str| -> Result<usize, ModelError> {
            v.parse().map_err(|_| ModelError::Config(format!("bad value `{v}` for {key}")))
        };
        match key {
            "d_h" => self.d_h = num(value)?,
            "heads" => self.heads = num(value)?,
            "layers" => self.layers = num(value)?,
            "d_ff" => self.d_ff = num(value)?,
            "k" => self.k = value.parse()?,
            "xi" => {
                self.xi = value
                    .parse()
                    .map_err(|_| ModelError::Config(format!("bad value `{value}` for xi")))?
            }
            "prompt_position" => self.prompt_position = value.parse()?,
            "sparse_function" => self.sparse_function = value.parse()?,
            "use_prompt" => {
                self.use_prompt = value
                    .parse()
                    .map_err(|_| ModelError::Config(format!("bad value `{value}` for use_prompt")))?
            }
            _ => return Err(ModelError::Config(format!("unknown model setting `{key}`"))),
        }
        Ok(())
    }

    pub fn from_sidecar(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flat `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_round_trip() {
        let mut c = ModelConfig::desk();
        c.k = TopK::Fixed(5);
        assert_eq!(ModelConfig::from_sidecar(&c.to_sidecar()).unwrap(), c);
        c.k = TopK::Fraction(8);
        c.sparse_function = SparseFunction::Entmax15;
        c.prompt_position = PromptPosition::Sparse;
        assert_eq!(ModelConfig::from_sidecar(&c.to_sidecar()).unwrap(), c);
        let d = ModelConfig::default();
        assert_eq!(ModelConfig::from_sidecar(&d.to_sidecar()).unwrap(), d);
    }

    #[test]
    fn default_k_is_half_the_customers() {
        let c = ModelConfig::default();
        assert_eq!(c.k, TopK::Fraction(2));
        assert_eq!(c.k_for(50), 25);
        assert_eq!(c.k_for(5), 3);
        assert_eq!(c.k_for(1), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig::from_sidecar("k = 0").is_err());
        assert!(ModelConfig::from_sidecar("k = n/0").is_err());
        assert_eq!(ModelConfig::from_sidecar("k = n/4").unwrap().k_for(20), 5);
        assert!(ModelConfig::from_sidecar("colour = red").is_err());
    }
}
