//! Expansion of templates into concrete prompts, one per community binding.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::library::{select_templates, PromptTemplate};
use crate::markup::{parse_markups, slots, MarkupError, Slot};
use crate::oracle::{OraclePrediction, OracleType};
use crate::requirements::{
    EthicalRequirement, InputType, LanguageCode, ReflectionType, TestScenarioConfig,
};

pub const DEFAULT_MAX_CASES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("template `{template}`: {source}")]
    Markup {
        template: String,
        #[source]
        source: MarkupError,
    },
    #[error("template `{template}` needs {needed} distinct communities but requirement `{requirement}` has {available}")]
    NotEnoughCommunities {
        template: String,
        requirement: String,
        needed: usize,
        available: usize,
    },
    #[error("requirement `{requirement}`: community `{community}` has no literal for {language}")]
    MissingLiteral {
        requirement: String,
        community: String,
        language: LanguageCode,
    },
    #[error("plan would contain more than {limit} test cases")]
    PlanTooLarge { limit: usize },
    #[error("no requirement produced any test case group: {}", warnings.join("; "))]
    EmptyPlan { warnings: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub slot: String,
    pub community: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub instance_index: usize,
    pub binding: Vec<Binding>,
    pub prompt_text: String,
}

impl TestCase {
    pub fn communities(&self) -> impl Iterator<Item = &str> {
        self.binding.iter().map(|b| b.community.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseGroup {
    pub requirement_name: String,
    pub concern: String,
    pub template_id: String,
    pub language: LanguageCode,
    pub input_type: InputType,
    pub reflection_type: ReflectionType,
    pub oracle_type: OracleType,
    pub oracle_prediction: OraclePrediction,
    pub delta: f64,
    pub cases: Vec<TestCase>,
}

/// Ordered tuples of `len` distinct indices drawn from `0..n`, in
/// lexicographic order. `len == 0` yields the single empty tuple.
pub fn distinct_tuples(n: usize, len: usize) -> Vec<Vec<usize>> {
    fn go(
        n: usize,
        len: usize,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(n, len, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    if len <= n {
        go(
            n,
            len,
            &mut Vec::with_capacity(len),
            &mut vec![false; n],
            &mut out,
        );
    }
    out
}

/// `n * (n-1) * ... * (n-len+1)`, saturating.
pub fn falling_factorial(n: usize, len: usize) -> usize {
    if len > n {
        return 0;
    }
    (0..len).fold(1usize, |acc, i| acc.saturating_mul(n - i))
}

/// Joins prefix, prompt and formatting instructions with newlines, skipping
/// empty parts.
pub fn assemble(prefix: Option<&str>, prompt: &str, output_formatting: &str) -> String {
    [prefix.unwrap_or(""), prompt, output_formatting]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn instantiate(
    template: &PromptTemplate,
    req: &EthicalRequirement,
    language: &LanguageCode,
) -> Result<TestCaseGroup, GenerationError> {
    let markups = parse_markups(&template.prompt).map_err(|source| GenerationError::Markup {
        template: template.template_id.clone(),
        source,
    })?;
    let slot_list: Vec<Slot> = slots(&markups);
    let k = req.communities.len();
    if slot_list.len() > k {
        return Err(GenerationError::NotEnoughCommunities {
            template: template.template_id.clone(),
            requirement: req.name.clone(),
            needed: slot_list.len(),
            available: k,
        });
    }

    let literals: Vec<&str> = if slot_list.is_empty() {
        Vec::new()
    } else {
        req.communities
            .iter()
            .map(|c| {
                c.literal(language)
                    .ok_or_else(|| GenerationError::MissingLiteral {
                        requirement: req.name.clone(),
                        community: c.id.clone(),
                        language: language.clone(),
                    })
            })
            .collect::<Result<_, _>>()?
    };

    // markup index -> slot index
    let markup_slot: Vec<usize> = markups
        .iter()
        .map(|m| {
            slot_list
                .iter()
                .position(|s| s.base == m.base && s.number == m.number)
                .expect("every markup has a slot")
        })
        .collect();

    let cases = distinct_tuples(k, slot_list.len())
        .into_iter()
        .enumerate()
        .map(|(instance_index, tuple)| {
            let mut core = String::with_capacity(template.prompt.len());
            let mut pos = 0;
            for (m, &slot) in markups.iter().zip(&markup_slot) {
                core.push_str(&template.prompt[pos..m.span.start]);
                core.push_str(literals[tuple[slot]]);
                pos = m.span.end;
            }
            core.push_str(&template.prompt[pos..]);
            TestCase {
                instance_index,
                binding: slot_list
                    .iter()
                    .zip(&tuple)
                    .map(|(s, &c)| Binding {
                        slot: s.label(),
                        community: req.communities[c].id.clone(),
                    })
                    .collect(),
                prompt_text: assemble(
                    template.prefix.as_deref(),
                    &core,
                    &template.output_formatting,
                ),
            }
        })
        .collect();

    Ok(TestCaseGroup {
        requirement_name: req.name.clone(),
        concern: req.concern.clone(),
        template_id: template.template_id.clone(),
        language: language.clone(),
        input_type: template.input_type,
        reflection_type: template.reflection_type,
        oracle_type: template.oracle_type,
        oracle_prediction: template.oracle_prediction.clone(),
        delta: req.delta,
        cases,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationOptions {
    pub max_cases: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            max_cases: DEFAULT_MAX_CASES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub groups: Vec<TestCaseGroup>,
    pub warnings: Vec<String>,
}

impl Plan {
    pub fn case_count(&self) -> usize {
        self.groups.iter().map(|g| g.cases.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.groups).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        Ok(Self {
            groups: serde_json::from_str(text)?,
            warnings: Vec::new(),
        })
    }
}

/// Requirement order, then language order, then library order. Templates that
/// cannot be instantiated become warnings.
pub fn generate_plan(
    requirements: &[EthicalRequirement],
    scenario: &TestScenarioConfig,
    library: &[PromptTemplate],
    options: GenerationOptions,
) -> Result<Plan, GenerationError> {
    let mut plan = Plan::default();
    let mut total = 0usize;
    for req in requirements {
        let before = plan.groups.len();
        for language in &req.languages {
            let selected = select_templates(library, req, language, scenario.n_templates);
            if selected.is_empty() {
                plan.warnings.push(format!(
                    "requirement `{}`: no template matches concern `{}` in {language}",
                    req.name, req.concern
                ));
            }
            for template in selected {
                match instantiate(template, req, language) {
                    Ok(group) => {
                        total += group.cases.len();
                        if total > options.max_cases {
                            return Err(GenerationError::PlanTooLarge {
                                limit: options.max_cases,
                            });
                        }
                        plan.groups.push(group);
                    }
                    Err(e) => plan
                        .warnings
                        .push(format!("requirement `{}`: {e}", req.name)),
                }
            }
        }
        if plan.groups.len() == before {
            plan.warnings.push(format!(
                "requirement `{}` produced no test case groups",
                req.name
            ));
        }
    }
    for w in &plan.warnings {
        warn!("{w}");
    }
    if !requirements.is_empty() && plan.groups.is_empty() {
        return Err(GenerationError::EmptyPlan {
            warnings: plan.warnings,
        });
    }
    Ok(plan)
}
