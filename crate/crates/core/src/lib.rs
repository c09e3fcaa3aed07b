//! Gait-conditioned quadruped locomotion learning on a simplified simulator.

pub mod eval;
pub mod foothold;
pub mod gait;
pub mod model;
pub mod nets;
pub mod obsbuild;
pub mod ppo;
pub mod rewards;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gait.md")]
    mod gait {}
    #[doc = include_str!("../../../book/src/footholds.md")]
    mod footholds {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/observations.md")]
    mod observations {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
