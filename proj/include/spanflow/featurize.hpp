#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/layout.hpp"

namespace spanflow::features {

// Reserved mask tokens. Spellings are part of the exported vocab format.
inline constexpr std::array<std::string_view, 11> kMaskTokens = {
    "<num_tens>", "<num_hundreds>", "<num_thousands>", "<num_millions>", "<currency>", "<percent>",
    "<quantity>", "<day>",          "<month>",         "<year>",         "<quarter>"};

bool is_mask_token(std::string_view s);

// Splits on whitespace and masks numbers (magnitude + kind) and dates
// (day, month, year, quarter). Everything else is lowercased and passed
// through with surrounding punctuation stripped.
std::vector<std::string> mask_token(std::string_view raw);

class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens, int buckets, int dim);

  // Dense row index; words outside the vocabulary hash into a bucket.
  int lookup(const std::string& token) const;
  int rows() const { return static_cast<int>(tokens_.size()) + buckets_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int buckets() const { return buckets_; }
  int dim() const { return dim_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int buckets_ = 0;
  int dim_ = 0;
};

// Mask tokens are always present; other words need min_count occurrences.
// Order: count descending, then token ascending.
Vocab build_vocab(const std::vector<layout::Span>& corpus, int min_count, int buckets, int dim);

struct EmbeddingTable {
  Eigen::MatrixXd weights;  // vocab.rows() x dim
};

EmbeddingTable init_embedding_table(const Vocab& vocab, std::uint64_t seed);

// Row indices of the span's masked tokens, one per occurrence.
std::vector<int> span_rows(const layout::Span& span, const Vocab& vocab);

// Mean of the rows. Throws ValidationError on an empty row list.
Eigen::VectorXd embed_rows(const std::vector<int>& rows, const EmbeddingTable& table);
Eigen::VectorXd embed_span(const layout::Span& span, const Vocab& vocab, const EmbeddingTable& table);

// Adds d(loss)/d(table) given d(loss)/d(span vector).
void accumulate_rows_grad(const std::vector<int>& rows, const Eigen::Ref<const Eigen::VectorXd>& grad,
                          Eigen::MatrixXd& table_grad);

}  // namespace spanflow::features
