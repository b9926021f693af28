use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

/// Token inventory. Ids 0, 1 and 2 are always `<pad>`, `<bos>` and `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<bos>".into(), "<eos>".into()];
        for s in symbols {
            let s = s.into();
            if tokens.contains(&s) {
                return Err(Error::Config(format!("duplicate vocabulary symbol `{s}`")));
            }
            tokens.push(s);
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad(&self) -> TokenId {
        PAD
    }

    pub fn bos(&self) -> TokenId {
        BOS
    }

    pub fn eos(&self) -> TokenId {
        EOS
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == symbol)
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })
        }
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
