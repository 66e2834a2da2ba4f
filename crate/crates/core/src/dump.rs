//! Congruity maps as a plain CSV with `# section: <name>` headers.
//!
//! Sections, in order and only when computed: `q_a`, `token_weights`, `s_a`,
//! `q_p`, `composition_weights`, `s_p`, `p_v`, then the same names with a `_k`
//! suffix for the knowledge branch, `p_k`, and finally `probs`. Each row of a
//! matrix is one CSV line; floats use the shortest representation that parses
//! back to the same value.

use std::fmt::Write as _;

use crate::autodiff::{Tape, Var};
use crate::branch::BranchTrace;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CongruityDump {
    pub sections: Vec<Section>,
}

impl CongruityDump {
    pub fn get(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.sections.iter().find(|s| s.name == name).map(|s| s.rows.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(out, "# section: {}", s.name).unwrap();
            for row in &s.rows {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", line.join(",")).unwrap();
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("# section:") {
                sections.push(Section {
                    name: name.trim().to_string(),
                    rows: Vec::new(),
                });
                continue;
            }
            let bad = |detail: String| Error::Config(format!("dump line {}: {detail}", lineno + 1));
            let section = sections
                .last_mut()
                .ok_or_else(|| bad("values before any section header".into()))?;
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            section.rows.push(row);
        }
        Ok(CongruityDump { sections })
    }
}

fn matrix<S: Scalar>(tape: &Tape<S>, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    t.data()
        .chunks(t.cols().max(1))
        .map(|row| row.iter().map(|x| x.as_f64()).collect())
        .collect()
}

fn branch_sections<S: Scalar>(tape: &Tape<S>, trace: &BranchTrace, suffix: &str, out: &mut Vec<Section>) {
    let mut push = |name: &str, v: Var| {
        out.push(Section {
            name: format!("{name}{suffix}"),
            rows: matrix(tape, v),
        })
    };
    if let Some(a) = &trace.align.atomic {
        push("q_a", a.similarity);
        push("token_weights", a.pooled.weights);
        push("s_a", a.pooled.score);
    }
    if let Some(c) = &trace.compose {
        push("q_p", c.output.similarity);
        push("composition_weights", c.output.pooled.weights);
        push("s_p", c.output.pooled.score);
    }
}

/// Runs one dropout-off forward pass and collects its congruity maps.
pub fn dump_congruity<S: Scalar>(model: &Model<S>, sample: &Sample) -> Result<CongruityDump> {
    let mut tape = Tape::new();
    let trace = model.forward(&mut tape, sample, Mode::Eval)?;
    let mut sections = Vec::new();
    branch_sections(&tape, &trace.text_image, "", &mut sections);
    sections.push(Section {
        name: "p_v".into(),
        rows: matrix(&tape, trace.patch_weights),
    });
    if let Some(tk) = &trace.text_knowledge {
        branch_sections(&tape, tk, "_k", &mut sections);
    }
    if let Some(pk) = trace.knowledge_weights {
        sections.push(Section {
            name: "p_k".into(),
            rows: matrix(&tape, pk),
        });
    }
    sections.push(Section {
        name: "probs".into(),
        rows: matrix(&tape, trace.probs),
    });
    Ok(CongruityDump { sections })
}
