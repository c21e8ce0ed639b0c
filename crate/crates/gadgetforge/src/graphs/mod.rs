//! Graph layers over parsed functions: AST, CFG, data-dependence edges and
//! the merged program dependence graph.

mod ast;
mod cfg;
mod dataflow;
mod export;
mod pdg;
mod postdom;

pub use ast::{build_ast, Ast, AstNode, NodeKind, NODE_KIND_COUNT};
pub use cfg::{build_cfg, Cfg, CfgEdge, EdgeLabel};
pub use dataflow::{build_ddg, DataEdge};
pub use export::{cfg_to_dot, pdg_to_dot, pdg_to_json};
pub use pdg::{build_pdg, ControlEdge, Pdg};
pub use postdom::{control_dependences, postdominators};
