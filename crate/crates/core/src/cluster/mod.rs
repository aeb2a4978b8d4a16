//! Day clustering: DTW distances between day-long state sequences, UPGMA
//! agglomeration, flat cuts, separation scores and tree export.

pub mod dtw;
pub mod matrix;
pub mod newick;
pub mod score;
pub mod upgma;

pub use dtw::{dtw_distance, encode_day, DayEncoding, EncodingMode};
pub use matrix::{pairwise_dtw, DistanceMatrix, LeafInfo};
pub use newick::{export_tree, parse_newick, write_newick, TreeNode};
pub use score::{separation_score, Separation};
pub use upgma::{cut_tree, upgma, Dendrogram, Merge};
