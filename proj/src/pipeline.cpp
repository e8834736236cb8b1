#include "spanflow/pipeline.hpp"

#include <unordered_map>

#include "spanflow/common.hpp"
#include "spanflow/gnn.hpp"

namespace spanflow::cli {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

CorpusPair make_corpus_pair(std::string name, const std::vector<layout::Token>& tokens1,
                            const std::vector<layout::Token>& tokens2, train::LabeledPair labels,
                            const layout::SegmentConfig& seg) {
  CorpusPair p;
  p.name = std::move(name);
  p.g1 = graph::build_page_graph(layout::segment_page(tokens1, seg));
  p.g2 = graph::build_page_graph(layout::segment_page(tokens2, seg));
  p.labels = std::move(labels);
  return p;
}

CorpusPair make_corpus_pair(const synth::GeneratedPair& gp, const layout::SegmentConfig& seg) {
  return make_corpus_pair(gp.page1.page_id, gp.page1.tokens, gp.page2.tokens, gp.labels, seg);
}

std::vector<CorpusPair> load_corpus(const std::filesystem::path& dir, const layout::SegmentConfig& seg) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("pairs") || !manifest["pairs"].is_array())
    throw ValidationError(manifest_path.string() + ": missing pairs list");
  std::vector<CorpusPair> out;
  for (const auto& entry : manifest["pairs"]) {
    try {
      const auto t1 = entry.at("tokens1").get<std::string>(), t2 = entry.at("tokens2").get<std::string>();
      const auto lf = entry.at("labels").get<std::string>();
      const auto name = std::filesystem::path(lf).stem().string();
      const auto tok1 = layout::parse_tokens_jsonl(read_file(dir / t1));
      const auto tok2 = layout::parse_tokens_jsonl(read_file(dir / t2));
      out.push_back(make_corpus_pair(name, tok1, tok2, train::load_labels(dir / lf), seg));
    } catch (const json::exception& e) {
      throw ValidationError(manifest_path.string() + ": malformed pair entry: " + e.what());
    }
  }
  if (out.empty()) throw ValidationError(manifest_path.string() + ": corpus has no pairs");
  return out;
}

features::Vocab corpus_vocab(const std::vector<CorpusPair>& pairs, int min_count, int buckets, int dim) {
  std::vector<layout::Span> spans;
  for (const auto& p : pairs)
    for (const auto* g : {&p.g1, &p.g2}) spans.insert(spans.end(), g->vertices.begin(), g->vertices.end());
  return features::build_vocab(spans, min_count, buckets, dim);
}

std::vector<train::Batch> make_batches(const std::vector<CorpusPair>& pairs, const features::Vocab& vocab) {
  std::vector<train::Batch> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(train::make_batch(p.name, p.g1, p.g2, p.labels, vocab));
  return out;
}

MatrixXd embed_batch(const train::Batch& b, const train::Model& m) {
  const auto masks = gnn::make_masks(b.graph, m.config);
  return gnn::forward(masks, train::batch_features(b, m), m.stack, m.config).embeddings;
}

std::vector<std::vector<VectorXd>> grid_embeddings(const CorpusPair& pair, const MatrixXd& embeddings) {
  std::vector<std::vector<VectorXd>> cells;
  if (!pair.labels.extra.contains("grid")) return cells;
  std::unordered_map<int, int> index;
  for (int i = 0; i < pair.g1.size(); ++i) index[pair.g1.vertices[i].span_id] = i;
  for (const auto& row : pair.labels.extra["grid"]) {
    cells.emplace_back();
    for (const auto& id : row) {
      auto it = index.find(id.get<int>());
      if (it == index.end())
        throw ValidationError(pair.name + ": grid names span " + std::to_string(id.get<int>()) + " not on page 1");
      cells.back().push_back(embeddings.row(it->second).transpose());
    }
  }
  return cells;
}

eval::EvalReport evaluate_corpus(const std::vector<CorpusPair>& pairs, const std::vector<train::Batch>& batches,
                                 const train::Model& m, const std::vector<int>& ks) {
  if (pairs.size() != batches.size()) throw ValidationError("evaluate: pairs and batches differ in length");
  eval::EvalReport report;
  eval::PairingTally all(ks);
  std::map<int, eval::PairingTally> per_table;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto& b = batches[i];
    const MatrixXd e = embed_batch(b, m);
    const MatrixXd p1 = e.topRows(b.n1), p2 = e.bottomRows(e.rows() - b.n1);
    all.add(p1, p2, b.pairs);
    auto it = per_table.try_emplace(b.table_columns, std::vector<int>{1}).first;
    it->second.add(p1, p2, b.pairs);
    const auto cells = grid_embeddings(pairs[i], e);
    if (!cells.empty() && cells.front().size() >= 2) {
      report.compositionality.merge(eval::compositionality(cells));
      ++report.compositionality_tables;
    }
    report.labeled += static_cast<long>(b.pairs.size());
  }
  for (int k : ks) report.top_k[k] = all.rate(k);
  for (const auto& [cols, tally] : per_table) report.per_table_accuracy[cols] = tally.rate(1);
  report.pairs = static_cast<int>(batches.size());
  return report;
}

}  // namespace spanflow::cli
