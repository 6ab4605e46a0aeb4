//! Semi-supervised tooth segmentation on triangle meshes.
//!
//! Unlabeled arches are decomposed into geometric components by spectral
//! clustering of mesh faces; those components drive a pairwise contrastive
//! objective on an embedding head, while labeled arches drive a generalized
//! dice loss on a per-face classifier. The two are combined as
//! `L = L_sup + lambda * L_self`.

pub mod geom;
pub mod harness;
pub mod losses;
pub mod mesh_io;
pub mod model;
pub mod preprocess;
pub mod spectral;
