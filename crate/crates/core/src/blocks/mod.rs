//! Token embedding, bidirectional SSM blocks, the backbone stack and the
//! cross-modal fusion block.

pub mod backbone;
pub mod checkpoint;
pub mod embed;
pub mod fusion;
pub mod tokens;
pub mod vim;

pub use backbone::{backbone_backward, backbone_forward, BackboneCache};
pub use checkpoint::{Checkpoint, StoredArray};
pub use embed::{patch_embed, patchify, Embedding};
pub use fusion::{fusion_backward, fusion_mamba, FusionBranch, FusionCache, FusionParams};
pub use tokens::TokenSeq;
pub use vim::{vim_block_backward, vim_block_forward, BlockDims, VimBlockCache, VimBlockParams};
