//! Deformable-cavity endoscope navigation: FEM wall, rod robot, frictional
//! contact, an episodic environment, PPO training and evaluation.

pub mod contact;
pub mod endoscope;
pub mod env;
pub mod evalsuite;
pub mod fem;
pub mod mesh;
pub mod ppo;
pub mod seed;
