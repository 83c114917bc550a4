//! Ghost module, squeeze-and-excite and Ghost bottleneck blocks.

pub mod bottleneck;
pub mod module;
pub mod se;

pub use bottleneck::{BottleneckConfig, Downsample, GhostBottleneck, Shortcut};
pub use module::{GhostModule, GhostModuleConfig};
pub use se::{SeBlock, SeConfig};
