//! Inference-mode embedding of single token bags into all levels.

use crate::error::{Error, Result};
use crate::frontend::{
    coarse_item_embed, coarse_query_embed, project_query_tokens, GatingProjection,
};
use crate::ghostvlad::{fine_embed, VladParams};
use crate::model::{HybridEmbedding, TokenBag, View};
use crate::params::ParameterSet;

fn check_dim(bag: &TokenBag, expected: usize) -> Result<()> {
    if bag.dim() != expected {
        return Err(Error::DimensionMismatch {
            what: "token bag",
            expected,
            got: bag.dim(),
        });
    }
    Ok(())
}

pub fn embed_query(params: &ParameterSet, bag: &TokenBag) -> Result<HybridEmbedding> {
    if bag.view() != View::Query {
        return Err(Error::format("token bag", "expected a query bag"));
    }
    check_dim(bag, params.config.text_dim)?;
    let t = &params.trainable;
    let gp = GatingProjection::new(&t.gate, &t.expert_proj);
    let coarse = coarse_query_embed(bag.condensed().row(0), gp)?.vector;
    let projected = project_query_tokens(bag.tokens(), &t.token_proj)?;
    let fine = fine_embed(&projected, &VladParams::from_parts(t, &params.running))?;
    Ok(HybridEmbedding { coarse, fine })
}

pub fn embed_item(params: &ParameterSet, bag: &TokenBag) -> Result<HybridEmbedding> {
    if bag.view() != View::Item {
        return Err(Error::format("token bag", "expected an item bag"));
    }
    check_dim(bag, params.config.dim)?;
    if bag.condensed().rows() != params.config.num_experts {
        return Err(Error::DimensionMismatch {
            what: "item aggregate token count",
            expected: params.config.num_experts,
            got: bag.condensed().rows(),
        });
    }
    let coarse = coarse_item_embed(bag.condensed())?.vector;
    let fine = fine_embed(
        bag.tokens(),
        &VladParams::from_parts(&params.trainable, &params.running),
    )?;
    Ok(HybridEmbedding { coarse, fine })
}

pub fn embed(params: &ParameterSet, bag: &TokenBag) -> Result<HybridEmbedding> {
    match bag.view() {
        View::Query => embed_query(params, bag),
        View::Item => embed_item(params, bag),
    }
}
