//! Scene runner, kernel disk cache, generated-source backend and file
//! formats built on `ipsym-core`.

pub mod cache;
pub mod codegen;
pub mod mesh;
pub mod obj;
pub mod scene;
