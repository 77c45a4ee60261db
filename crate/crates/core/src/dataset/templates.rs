//! Instruction templates with named `{slot}` placeholders.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::prompt::Instruction;
use crate::world::{Action, TaskKind};

pub const GENDERS: [&str; 2] = ["man", "woman"];
pub const CLOTHING_COLORS: [&str; 6] = ["blue", "black", "red", "white", "green", "gray"];

/// Appearance used to refer to a person in a following instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HumanDescriptor {
    pub gender: String,
    pub shirt: String,
    pub pants: String,
}

impl HumanDescriptor {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            gender: GENDERS.choose(rng).unwrap().to_string(),
            shirt: CLOTHING_COLORS.choose(rng).unwrap().to_string(),
            pants: CLOTHING_COLORS.choose(rng).unwrap().to_string(),
        }
    }

    /// "man wearing a blue shirt and black pants"
    pub fn phrase(&self) -> String {
        format!(
            "{} wearing a {} shirt and {} pants",
            self.gender, self.shirt, self.pants
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub task: TaskKind,
    pub pattern: String,
}

impl InstructionTemplate {
    pub fn new(task: TaskKind, pattern: impl Into<String>) -> Self {
        Self {
            task,
            pattern: pattern.into(),
        }
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.pattern.as_str();
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else { break };
            let name = &rest[open + 1..open + close];
            if !out.iter().any(|s| s == name) {
                out.push(name.to_string());
            }
            rest = &rest[open + close + 1..];
        }
        out
    }
}

pub const OBJECTNAV: &str = "Search for a/an {object}.";
pub const FOLLOW: &str = "follow the {person}";
pub const LOW_LEVEL: &str = "move forward {forward} steps, then turn {direction} {turns} steps.";
pub const VLN: &str = "Walk past the {first}, continue by the {second}, and stop at the {destination}.";
pub const EQA_COLOR: &str = "What color is the {object}?";

/// Rewrites rendered text. The default leaves it unchanged.
pub trait Paraphraser {
    fn paraphrase(&self, text: &str, rng: &mut ChaCha8Rng) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityParaphraser;

impl Paraphraser for IdentityParaphraser {
    fn paraphrase(&self, text: &str, _rng: &mut ChaCha8Rng) -> String {
        text.to_string()
    }
}

pub fn render_instruction(
    template: &InstructionTemplate,
    slots: &BTreeMap<String, String>,
    seed: u64,
) -> Result<Instruction> {
    render_with(template, slots, seed, &IdentityParaphraser)
}

pub fn render_with(
    template: &InstructionTemplate,
    slots: &BTreeMap<String, String>,
    seed: u64,
    paraphraser: &dyn Paraphraser,
) -> Result<Instruction> {
    let mut text = template.pattern.clone();
    for name in template.slots() {
        let value = slots
            .get(&name)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| NavError::MissingSlot(name.clone()))?;
        text = text.replace(&format!("{{{name}}}"), value);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = paraphraser.paraphrase(&text, &mut rng);
    if text.trim().is_empty() {
        return Err(NavError::MissingSlot("text".into()));
    }
    Ok(Instruction::new(text, template.task))
}

fn fill(task: TaskKind, pattern: &str, pairs: &[(&str, String)]) -> String {
    let slots = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    render_instruction(&InstructionTemplate::new(task, pattern), &slots, 0)
        .expect("built-in template slots are filled")
        .text
}

pub fn objectnav(object: &str) -> String {
    fill(TaskKind::ObjectNav, OBJECTNAV, &[("object", object.into())])
}

pub fn follow(person: &str) -> String {
    fill(TaskKind::Follow, FOLLOW, &[("person", person.into())])
}

pub fn low_level(forward: usize, turn: Action, turns: usize) -> String {
    let direction = if turn == Action::TurnLeft { "left" } else { "right" };
    fill(
        TaskKind::Vln,
        LOW_LEVEL,
        &[
            ("forward", forward.to_string()),
            ("direction", direction.into()),
            ("turns", turns.to_string()),
        ],
    )
}

pub fn vln(first: &str, second: &str, destination: &str) -> String {
    fill(
        TaskKind::Vln,
        VLN,
        &[
            ("first", first.into()),
            ("second", second.into()),
            ("destination", destination.into()),
        ],
    )
}

pub fn eqa_color(object: &str) -> String {
    fill(TaskKind::Eqa, EQA_COLOR, &[("object", object.into())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objectnav_template_text() {
        assert_eq!(objectnav("chair"), "Search for a/an chair.");
    }

    #[test]
    fn follow_template_text() {
        let d = HumanDescriptor {
            gender: "man".into(),
            shirt: "blue".into(),
            pants: "black".into(),
        };
        assert_eq!(
            follow(&d.phrase()),
            "follow the man wearing a blue shirt and black pants"
        );
    }

    #[test]
    fn low_level_template_text() {
        assert_eq!(
            low_level(4, Action::TurnRight, 3),
            "move forward 4 steps, then turn right 3 steps."
        );
    }

    #[test]
    fn missing_slot_is_reported() {
        let t = InstructionTemplate::new(TaskKind::ObjectNav, OBJECTNAV);
        let err = render_instruction(&t, &BTreeMap::new(), 1).unwrap_err();
        assert!(matches!(err, NavError::MissingSlot(s) if s == "object"));
    }

    #[test]
    fn slots_in_order() {
        let t = InstructionTemplate::new(TaskKind::Vln, LOW_LEVEL);
        assert_eq!(t.slots(), ["forward", "direction", "turns"]);
    }

    struct Shout;
    impl Paraphraser for Shout {
        fn paraphrase(&self, text: &str, _rng: &mut ChaCha8Rng) -> String {
            text.to_uppercase()
        }
    }

    #[test]
    fn paraphrase_hook_is_applied() {
        let t = InstructionTemplate::new(TaskKind::Eqa, EQA_COLOR);
        let slots = [("object".to_string(), "bed".to_string())].into_iter().collect();
        let i = render_with(&t, &slots, 3, &Shout).unwrap();
        assert_eq!(i.text, "WHAT COLOR IS THE BED?");
    }

    proptest::proptest! {
        #[test]
        fn any_slot_assignment_renders(obj in "[a-z]{1,12}", n in 1usize..20, m in 1usize..20, left in proptest::bool::ANY) {
            proptest::prop_assert!(!objectnav(&obj).trim().is_empty());
            let turn = if left { Action::TurnLeft } else { Action::TurnRight };
            proptest::prop_assert!(!low_level(n, turn, m).is_empty());
        }
    }
}
