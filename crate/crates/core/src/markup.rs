//! Community placeholders inside prompt text: `{BASE}` or `{BASEn}`.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

// Trailing digits always belong to the number, so a base never ends in a digit.
static MARKUP_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\{([A-Z](?:[A-Z0-9_]*[A-Z_])?)([1-9][0-9]*)?\}").expect("valid regex")
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Markup {
    pub base: String,
    pub number: Option<u32>,
    /// Byte range of the whole markup, braces included.
    pub span: Range<usize>,
}

/// One substitution position. Every occurrence of the same slot receives the
/// same community.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub base: String,
    pub number: Option<u32>,
}

impl Slot {
    pub fn label(&self) -> String {
        match self.number {
            Some(n) => format!("{}{}", self.base, n),
            None => self.base.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarkupError {
    #[error("numbered markups for {base} start at {first}, not 1")]
    StartsAbove { base: String, first: u32 },
    #[error("numbered markups for {base} skip {missing}")]
    Gap { base: String, missing: u32 },
    #[error("{base} is used both with and without a number")]
    Mixed { base: String },
    #[error(
        "{base} is numbered but only {base}1 is used; numbered markups need at least two positions"
    )]
    SingleNumbered { base: String },
    #[error("markup number in {text} is too large")]
    Overflow { text: String },
}

/// Returns markups left to right. Braced text outside the grammar is left alone.
pub fn parse_markups(prompt: &str) -> Result<Vec<Markup>, MarkupError> {
    let mut out = Vec::new();
    for cap in MARKUP_RE.captures_iter(prompt) {
        let whole = cap.get(0).expect("group 0");
        let number = match cap.get(2) {
            Some(m) => Some(
                m.as_str()
                    .parse::<u32>()
                    .map_err(|_| MarkupError::Overflow {
                        text: whole.as_str().to_owned(),
                    })?,
            ),
            None => None,
        };
        out.push(Markup {
            base: cap[1].to_owned(),
            number,
            span: whole.range(),
        });
    }

    for base in bases_in_order(&out) {
        let mut numbers: Vec<u32> = out
            .iter()
            .filter(|m| m.base == base)
            .filter_map(|m| m.number)
            .collect();
        numbers.sort_unstable();
        numbers.dedup();
        let Some(&first) = numbers.first() else {
            continue;
        };
        if first != 1 {
            return Err(MarkupError::StartsAbove { base, first });
        }
        for (expected, &n) in (1u32..).zip(&numbers) {
            if n != expected {
                return Err(MarkupError::Gap {
                    base,
                    missing: expected,
                });
            }
        }
    }
    Ok(out)
}

fn bases_in_order(markups: &[Markup]) -> Vec<String> {
    let mut bases: Vec<String> = Vec::new();
    for m in markups {
        if !bases.contains(&m.base) {
            bases.push(m.base.clone());
        }
    }
    bases
}

/// Template-level rules on top of [`parse_markups`]: no base is both numbered
/// and un-numbered, and numbered bases use at least two positions.
pub fn check_template_markups(markups: &[Markup]) -> Result<(), MarkupError> {
    for base in bases_in_order(markups) {
        let of_base = || markups.iter().filter(|m| m.base == base);
        let numbered = of_base().any(|m| m.number.is_some());
        let plain = of_base().any(|m| m.number.is_none());
        if numbered && plain {
            return Err(MarkupError::Mixed { base });
        }
        if numbered && of_base().filter_map(|m| m.number).max() == Some(1) {
            return Err(MarkupError::SingleNumbered { base });
        }
    }
    Ok(())
}

/// Distinct slots: bases in order of first appearance, numbered positions
/// ascending within a base.
pub fn slots(markups: &[Markup]) -> Vec<Slot> {
    let mut out = Vec::new();
    for base in bases_in_order(markups) {
        let mut numbers: Vec<Option<u32>> = markups
            .iter()
            .filter(|m| m.base == base)
            .map(|m| m.number)
            .collect();
        numbers.sort_unstable();
        numbers.dedup();
        out.extend(numbers.into_iter().map(|number| Slot {
            base: base.clone(),
            number,
        }));
    }
    out
}
