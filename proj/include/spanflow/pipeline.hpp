#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spanflow/eval.hpp"
#include "spanflow/featurize.hpp"
#include "spanflow/layout.hpp"
#include "spanflow/pagegraph.hpp"
#include "spanflow/synthdoc.hpp"
#include "spanflow/train.hpp"

// Glue shared by the command line and the acceptance suite: corpus
// loading, batching and whole-corpus evaluation.
namespace spanflow::cli {

struct CorpusPair {
  std::string name;
  graph::PageGraph g1, g2;
  train::LabeledPair labels;
};

// Segments both token pages and builds their graphs.
CorpusPair make_corpus_pair(std::string name, const std::vector<layout::Token>& tokens1,
                            const std::vector<layout::Token>& tokens2, train::LabeledPair labels,
                            const layout::SegmentConfig& seg);
CorpusPair make_corpus_pair(const synth::GeneratedPair& gp, const layout::SegmentConfig& seg);

// Reads manifest.json and every listed pair.
std::vector<CorpusPair> load_corpus(const std::filesystem::path& dir, const layout::SegmentConfig& seg);

features::Vocab corpus_vocab(const std::vector<CorpusPair>& pairs, int min_count, int buckets, int dim);
std::vector<train::Batch> make_batches(const std::vector<CorpusPair>& pairs, const features::Vocab& vocab);

// Bound-order embeddings of one batch.
Eigen::MatrixXd embed_batch(const train::Batch& b, const train::Model& m);

// Page-1 grid cells of a pair whose labels carry a "grid", as embeddings.
// Empty when the pair has no grid.
std::vector<std::vector<Eigen::VectorXd>> grid_embeddings(const CorpusPair& pair, const Eigen::MatrixXd& embeddings);

eval::EvalReport evaluate_corpus(const std::vector<CorpusPair>& pairs, const std::vector<train::Batch>& batches,
                                 const train::Model& m, const std::vector<int>& ks = eval::kDefaultTopK);

}  // namespace spanflow::cli
