//! The network vocabulary: stem, RepViT block, SE layer, downsampling layer
//! and classifier.
//!
//! Every convolution is followed by its own batch norm in train form. Only
//! the channel mixers and the stem apply GeLU; the depthwise token mixer
//! stays linear so its branches fuse exactly.

mod conv_bn;
mod layers;
mod repdw;
mod repvit_block;
mod se;

pub use conv_bn::ConvBn;
pub use layers::{Classifier, DownsampleLayer, Stem};
pub use repdw::{DwBranch, RepDwBranches, RepDwForm, RepDwLayer};
pub use repvit_block::{ChannelMixer, RepVitBlock};
pub use se::{se_reduction, SeLayer};
