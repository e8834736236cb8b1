#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/pagegraph.hpp"

namespace spanflow::eval {

inline constexpr int kReportVersion = 1;
inline const std::vector<int> kDefaultTopK = {1, 3, 5, 10};

// Euclidean distance from `anchor` to every row of `targets`.
Eigen::VectorXd distance_vector(const Eigen::Ref<const Eigen::VectorXd>& anchor, const Eigen::MatrixXd& targets);

// 0-based position of `true_index` when candidates are ordered by distance,
// equal distances ordered by index.
int true_rank(const Eigen::VectorXd& distances, int true_index);

struct PairingTally {
  std::vector<int> ks;
  std::vector<long> hits;  // per k
  long total = 0;

  explicit PairingTally(std::vector<int> k_list = kDefaultTopK);
  void add(const Eigen::MatrixXd& page1, const Eigen::MatrixXd& page2, const std::vector<std::pair<int, int>>& pairs);
  void merge(const PairingTally& other);
  double rate(int k) const;
};

// Fraction of anchors whose true partner is within the k nearest vertices
// of page 2.
double pairing_score(const Eigen::MatrixXd& page1, const Eigen::MatrixXd& page2,
                     const std::vector<std::pair<int, int>>& pairs, int k);

struct CompositionalityResult {
  long successes = 0;
  long applications = 0;
  double rate() const { return applications ? static_cast<double>(successes) / applications : 0.0; }
  void merge(const CompositionalityResult& o) {
    successes += o.successes;
    applications += o.applications;
  }
};

// cells[row][col]. For every column pair k < l and rows i, j the query
// v[i][l] - v[i][k] + v[j][k] succeeds when its nearest cell (ties to the
// lower row-major index) is v[j][l].
CompositionalityResult compositionality(const std::vector<std::vector<Eigen::VectorXd>>& cells);

struct EvalReport {
  std::map<int, double> top_k;               // k -> rate
  std::map<int, double> per_table_accuracy;  // value-column count -> top-1 rate
  CompositionalityResult compositionality;
  int compositionality_tables = 0;
  long labeled = 0;
  int pairs = 0;

  nlohmann::json to_json() const;
};

// 256-step ramp from white to deep blue.
std::string ramp_color(double t);

// Span rectangles filled by rollout weight (scaled by the row maximum),
// query span outlined.
std::string overlay_svg(const graph::PageGraph& g, const Eigen::Ref<const Eigen::VectorXd>& weights, int query);

// Header row "span_id,page_id,e0,..,e{d-1}".
std::string embeddings_csv(const graph::PageGraph& g, const Eigen::MatrixXd& embeddings);

}  // namespace spanflow::eval
