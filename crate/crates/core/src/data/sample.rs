use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sequence length bounds applied at load time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_text_len: usize,
    pub max_knowledge_len: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_text_len: 100,
            max_knowledge_len: 20,
        }
    }
}

/// One post: token, patch and optional knowledge embeddings with their dependency edges.
///
/// Embeddings keep the raw encoder width; projection into the shared space happens in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// 1 marks a sarcastic post.
    pub label: u8,
    pub text: Tensor<f64>,
    pub image: Tensor<f64>,
    pub knowledge: Option<Tensor<f64>>,
    pub text_edges: Vec<(usize, usize)>,
    pub knowledge_edges: Option<Vec<(usize, usize)>>,
    pub grid_side: usize,
}

impl Sample {
    pub fn text_len(&self) -> usize {
        self.text.rows()
    }

    pub fn patch_count(&self) -> usize {
        self.image.rows()
    }

    pub fn knowledge_len(&self) -> usize {
        self.knowledge.as_ref().map_or(0, Tensor::rows)
    }

    /// Same sample with the knowledge modality removed.
    pub fn without_knowledge(&self) -> Sample {
        Sample {
            knowledge: None,
            knowledge_edges: None,
            ..self.clone()
        }
    }

    pub fn validate(&self, limits: &Limits) -> Result<()> {
        let fail = |detail: String| Err(Error::data(&self.id, detail));
        if self.label > 1 {
            return fail(format!("label {} is not 0 or 1", self.label));
        }
        let n = self.text_len();
        if n == 0 || n > limits.max_text_len {
            return fail(format!("text length {n} outside 1..={}", limits.max_text_len));
        }
        if self.grid_side == 0 || self.grid_side * self.grid_side != self.patch_count() {
            return fail(format!(
                "grid side {} squared does not equal patch count {}",
                self.grid_side,
                self.patch_count()
            ));
        }
        check_edges(&self.id, "text", &self.text_edges, n)?;
        match (&self.knowledge, &self.knowledge_edges) {
            (Some(k), edges) => {
                let m = k.rows();
                if m == 0 || m > limits.max_knowledge_len {
                    return fail(format!("knowledge length {m} outside 1..={}", limits.max_knowledge_len));
                }
                if let Some(edges) = edges {
                    check_edges(&self.id, "knowledge", edges, m)?;
                }
            }
            (None, Some(edges)) if !edges.is_empty() => {
                return fail("knowledge edges without knowledge embeddings".into());
            }
            (None, _) => {}
        }
        Ok(())
    }
}

fn check_edges(id: &str, which: &str, edges: &[(usize, usize)], len: usize) -> Result<()> {
    match edges.iter().find(|&&(i, j)| i >= len || j >= len) {
        Some(&(i, j)) => Err(Error::data(
            id,
            format!("{which} edge ({i},{j}) out of range for length {len}"),
        )),
        None => Ok(()),
    }
}
