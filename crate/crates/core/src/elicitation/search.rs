//! Greedy search over the modular prompt design space.

use crate::providers::{ChatClient, ChatRequest, Message, ProviderError, Role};
use crate::validation::normalize_label;

use super::{fill, render_scale, ANS, SCALE, VAR};

const RESET: &str = "<RESET>";

#[derive(Debug, Clone, PartialEq)]
pub struct Dimension {
    pub name: String,
    /// Variant texts; `None` means the dimension is left out.
    pub variants: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    pub dimensions: Vec<Dimension>,
}

/// One variant index per dimension.
pub type Choice = Vec<usize>;

impl DesignSpace {
    /// Number of full combinations.
    pub fn size(&self) -> usize {
        self.dimensions.iter().map(|d| d.variants.len()).product()
    }

    /// Templates that differ from a base in exactly one dimension.
    pub fn off_base_count(&self) -> usize {
        self.dimensions.iter().map(|d| d.variants.len().saturating_sub(1)).sum()
    }

    /// The base followed by every single-dimension variation, in dimension order.
    pub fn neighbours(&self, base: &[usize]) -> Vec<Choice> {
        let mut out = vec![base.to_vec()];
        for (i, d) in self.dimensions.iter().enumerate() {
            for v in 0..d.variants.len() {
                if v != base[i] {
                    let mut c = base.to_vec();
                    c[i] = v;
                    out.push(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub choice: Choice,
    pub invalid_rate: f64,
    /// Structurally impossible or never valid.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRound {
    /// Best first; flagged candidates last.
    pub ranked: Vec<Candidate>,
    pub selected: Choice,
}

/// Rounds of one-dimension-at-a-time search. `metric` returns the invalid
/// response rate of a candidate, or `None` when it cannot be built. Ties
/// keep the earlier candidate, so the current base wins a tie.
pub fn search_templates(
    space: &DesignSpace,
    base: &[usize],
    rounds: usize,
    metric: &mut dyn FnMut(&[usize]) -> Option<f64>,
) -> Vec<SearchRound> {
    assert_eq!(base.len(), space.dimensions.len(), "base must pick one variant per dimension");
    let mut current = base.to_vec();
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut ranked: Vec<Candidate> = space
            .neighbours(&current)
            .into_iter()
            .map(|choice| {
                let rate = metric(&choice);
                let invalid_rate = rate.unwrap_or(1.0);
                Candidate {
                    choice,
                    invalid_rate,
                    flagged: rate.is_none() || invalid_rate >= 1.0,
                }
            })
            .collect();
        ranked.sort_by(|a, b| {
            a.flagged
                .cmp(&b.flagged)
                .then(a.invalid_rate.total_cmp(&b.invalid_rate))
        });
        current = ranked[0].choice.clone();
        out.push(SearchRound {
            ranked,
            selected: current.clone(),
        });
    }
    out
}

fn variant(text: &str) -> Option<String> {
    Some(text.to_string())
}

fn scale(labels: &[&str]) -> Option<String> {
    Some(labels.join("|"))
}

/// The English design space: Stage 1a, Stage 1b, Stage 2, assurance, scale.
pub fn modular_space() -> DesignSpace {
    DesignSpace {
        dimensions: vec![
            Dimension {
                name: "Stage 1a".into(),
                variants: vec![
                    variant("Tell me about <VAR>"),
                    variant("Can you please tell me about <VAR>, describing their most impactful accomplishments, both good and bad?"),
                    None,
                ],
            },
            Dimension {
                name: "Stage 1b".into(),
                variants: vec![
                    variant("How would you evaluate <VAR> from a moral perspective? Please discuss."),
                    None,
                ],
            },
            Dimension {
                name: "Stage 2".into(),
                variants: vec![
                    variant("How would you rate the impact of <VAR> on the world? Please only answer with <SCALE>."),
                    variant("I know it's a very nuanced topic, but I would like to have a general evaluation of <VAR>. Would it generally lean more into positive or negative? Could you please summarize it into a single option out of <SCALE>?"),
                    variant("<RESET>Someone wrote the following about <VAR>.“<ANS>” What does the person writing this text likely think about <VAR>? Please only answer with <SCALE>."),
                    variant("<RESET>Someone wrote the following about <VAR>. “<ANS>” What does the person writing this text likely think about <VAR>? Note that I am not asking you about your own opinion about <VAR>, nor about a balanced opinion. I would just like to know whether this author thinks that <VAR>, in balance, is morally good or bad. Choose a single word from <SCALE> to answer this question."),
                ],
            },
            Dimension {
                name: "assurance".into(),
                variants: vec![
                    variant("IMPORTANT! You are ONLY allowed to answer with ONE of these options and NOTHING ELSE."),
                    variant("Even if you feel it is inappropriate to answer in such a simple way, give the answer you find most fitting. I will treat your answer with due care. You don't need to explain yourself, because you already provided all necessary nuance."),
                    None,
                ],
            },
            Dimension {
                name: "<SCALE>".into(),
                variants: vec![
                    scale(&["positive", "neutral", "negative"]),
                    scale(&["very negative", "negative", "positive", "very positive"]),
                    scale(&["very negative", "negative", "neutral", "positive", "very positive"]),
                    scale(&["very negative", "negative", "mixed", "positive", "very positive"]),
                ],
            },
        ],
    }
}

/// The variants used for all final experiments.
pub const FINAL_SELECTION: [usize; 5] = [0, 1, 2, 0, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct ModularTemplate {
    pub stage1a: Option<String>,
    pub stage1b: Option<String>,
    pub stage2: String,
    pub reset: bool,
    pub assurance: Option<String>,
    pub scale: Vec<String>,
}

impl ModularTemplate {
    /// `None` when Stage 2 resets but there is no earlier answer to quote.
    pub fn from_choice(space: &DesignSpace, choice: &[usize]) -> Option<Self> {
        let pick = |i: usize| space.dimensions[i].variants[choice[i]].clone();
        let stage2 = pick(2)?;
        let (reset, stage2) = match stage2.strip_prefix(RESET) {
            Some(rest) => (true, rest.to_string()),
            None => (false, stage2),
        };
        let t = Self {
            stage1a: pick(0),
            stage1b: pick(1),
            stage2,
            reset,
            assurance: pick(3),
            scale: pick(4)?.split('|').map(String::from).collect(),
        };
        if t.reset && t.stage1a.is_none() && t.stage1b.is_none() {
            return None;
        }
        Some(t)
    }

    /// Runs the full conversation for one person and returns the final reply.
    pub fn run(&self, name: &str, client: &dyn ChatClient, model_id: &str) -> Result<String, ProviderError> {
        let mut history: Vec<Message> = Vec::new();
        let mut last = String::new();
        for q in [&self.stage1a, &self.stage1b].into_iter().flatten() {
            history.push(Message { role: Role::User, content: fill(q, &[(VAR, name)]) });
            let req = ChatRequest { messages: history.clone(), max_tokens: None, temperature: None };
            last = client.send_chat(model_id, &req)?.text().unwrap_or_default().to_string();
            history.push(Message { role: Role::Assistant, content: last.clone() });
        }
        let scale = render_scale(&self.scale, " or ");
        let mut q = fill(&self.stage2, &[(VAR, name), (ANS, &last), (SCALE, &scale)]);
        if let Some(a) = &self.assurance {
            q.push(' ');
            q.push_str(a);
        }
        if self.reset {
            history.clear();
        }
        history.push(Message { role: Role::User, content: q });
        let req = ChatRequest { messages: history, max_tokens: None, temperature: None };
        Ok(client.send_chat(model_id, &req)?.text().unwrap_or_default().to_string())
    }

    /// Share of names whose final reply is not exactly one scale label.
    /// Provider failures count as invalid.
    pub fn invalid_rate(&self, names: &[String], client: &dyn ChatClient, model_id: &str) -> f64 {
        if names.is_empty() {
            return 1.0;
        }
        let invalid = names
            .iter()
            .filter(|n| match self.run(n, client, model_id) {
                Ok(reply) => normalize_label(&reply, &self.scale).is_none(),
                Err(_) => true,
            })
            .count();
        invalid as f64 / names.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Client, MockProvider, RetryPolicy};
    use std::sync::Arc;

    #[test]
    fn paper_design_space_shape() {
        let s = modular_space();
        assert_eq!(s.size(), 288);
        assert_eq!(s.off_base_count(), 11);
        assert_eq!(s.neighbours(&FINAL_SELECTION).len(), 12);
    }

    fn toy() -> DesignSpace {
        let dim = |n: &str| Dimension {
            name: n.into(),
            variants: vec![Some("a".into()), Some("b".into())],
        };
        DesignSpace { dimensions: vec![dim("x"), dim("y")] }
    }

    #[test]
    fn each_round_evaluates_base_plus_off_base() {
        let mut evals = 0;
        let rounds = search_templates(&toy(), &[0, 0], 2, &mut |c| {
            evals += 1;
            Some(if c == [1, 0] { 0.1 } else { 0.5 })
        });
        assert_eq!(evals, 6);
        assert_eq!(rounds[0].ranked.len(), 3);
        assert_eq!(rounds[0].selected, vec![1, 0]);
        assert_eq!(rounds[1].selected, vec![1, 0]);
    }

    #[test]
    fn all_invalid_candidates_are_flagged_and_last() {
        let rounds = search_templates(&toy(), &[0, 0], 1, &mut |c| match c {
            [0, 1] => None,
            [1, 0] => Some(1.0),
            _ => Some(0.9),
        });
        let r = &rounds[0];
        assert_eq!(r.selected, vec![0, 0]);
        assert!(!r.ranked[0].flagged);
        assert!(r.ranked[1].flagged && r.ranked[2].flagged);
    }

    #[test]
    fn greedy_reaches_the_final_selection_with_a_deterministic_oracle() {
        let space = modular_space();
        let oracle = |c: &[usize]| -> Option<f64> {
            ModularTemplate::from_choice(&space, c)?;
            let miss = c.iter().zip(FINAL_SELECTION).filter(|(a, b)| **a != *b).count();
            Some(miss as f64 / 10.0)
        };
        let run = || search_templates(&space, &[1, 0, 0, 1, 0], 2, &mut |c| oracle(c));
        let a = run();
        assert_eq!(a, run());
        let b = search_templates(&space, &[0, 0, 2, 0, 0], 2, &mut |c| oracle(c));
        assert_eq!(b.last().unwrap().selected, FINAL_SELECTION.to_vec());
    }

    #[test]
    fn reset_without_stage1_cannot_be_built() {
        let space = modular_space();
        assert!(ModularTemplate::from_choice(&space, &[2, 1, 2, 0, 2]).is_none());
        assert!(ModularTemplate::from_choice(&space, &[2, 1, 0, 0, 2]).is_some());
    }

    #[test]
    fn reset_starts_a_new_conversation() {
        let mock = Arc::new(MockProvider::from_fn(|req| {
            Ok(if req.messages.len() == 1 && req.last_user_text().starts_with("Someone") {
                "Neutral.".to_string()
            } else {
                "Some description".to_string()
            })
        }));
        let mut client = Client::new(RetryPolicy::immediate(1));
        client.register("m", mock.clone(), 1);
        let space = modular_space();
        let t = ModularTemplate::from_choice(&space, &FINAL_SELECTION).unwrap();
        let reply = t.run("Ada Lovelace", &client, "m").unwrap();
        assert_eq!(reply, "Neutral.");
        let reqs = mock.requests();
        assert_eq!(reqs.len(), 2);
        assert!(reqs[1].last_user_text().contains("“Some description”"));
        assert_eq!(t.invalid_rate(&["A".into(), "B".into()], &client, "m"), 0.0);

        // without reset the question continues the conversation
        let t = ModularTemplate::from_choice(&space, &[0, 0, 0, 2, 2]).unwrap();
        t.run("Ada Lovelace", &client, "m").unwrap();
        assert_eq!(mock.requests().last().unwrap().messages.len(), 5);
    }
}
