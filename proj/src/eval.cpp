#include "spanflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "spanflow/common.hpp"

namespace spanflow::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

VectorXd distance_vector(const Eigen::Ref<const VectorXd>& anchor, const MatrixXd& targets) {
  if (targets.rows() == 0) throw ValidationError("distance_vector: empty target set");
  if (targets.cols() != anchor.size())
    throw ValidationError("distance_vector: anchor has dimension " + std::to_string(anchor.size()) +
                          ", targets have " + std::to_string(targets.cols()));
  return (targets.rowwise() - anchor.transpose()).rowwise().norm();
}

int true_rank(const VectorXd& d, int true_index) {
  if (true_index < 0 || true_index >= d.size()) throw ValidationError("true_rank: index out of range");
  const double t = d(true_index);
  int rank = 0;
  for (Eigen::Index j = 0; j < d.size(); ++j)
    if (d(j) < t || (d(j) == t && j < true_index)) ++rank;
  return rank;
}

PairingTally::PairingTally(std::vector<int> k_list) : ks(std::move(k_list)), hits(ks.size(), 0) {
  for (int k : ks)
    if (k < 1) throw ValidationError("top-k values must be >= 1");
}

void PairingTally::add(const MatrixXd& page1, const MatrixXd& page2, const std::vector<std::pair<int, int>>& pairs) {
  for (const auto& [a, p] : pairs) {
    if (a < 0 || a >= page1.rows() || p < 0 || p >= page2.rows())
      throw ValidationError("labeled pair (" + std::to_string(a) + ", " + std::to_string(p) + ") out of range");
    const int rank = true_rank(distance_vector(page1.row(a).transpose(), page2), p);
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (rank < ks[i]) ++hits[i];
    ++total;
  }
}

void PairingTally::merge(const PairingTally& o) {
  if (o.ks != ks) throw ValidationError("cannot merge tallies with different k lists");
  for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += o.hits[i];
  total += o.total;
}

double PairingTally::rate(int k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ValidationError("k=" + std::to_string(k) + " was not tallied");
  return total ? static_cast<double>(hits[it - ks.begin()]) / static_cast<double>(total) : 0.0;
}

double pairing_score(const MatrixXd& page1, const MatrixXd& page2, const std::vector<std::pair<int, int>>& pairs,
                     int k) {
  PairingTally t({k});
  t.add(page1, page2, pairs);
  return t.rate(k);
}

CompositionalityResult compositionality(const std::vector<std::vector<VectorXd>>& cells) {
  const std::size_t rows = cells.size();
  if (rows == 0) throw ValidationError("compositionality: empty grid");
  const std::size_t cols = cells.front().size();
  if (cols < 2) throw ValidationError("compositionality: need at least two columns");
  const Eigen::Index d = cells.front().front().size();
  MatrixXd all(static_cast<Eigen::Index>(rows * cols), d);
  for (std::size_t i = 0; i < rows; ++i) {
    if (cells[i].size() != cols) throw ValidationError("compositionality: incomplete grid at row " + std::to_string(i));
    for (std::size_t c = 0; c < cols; ++c) {
      if (cells[i][c].size() != d) throw ValidationError("compositionality: inconsistent embedding width");
      all.row(static_cast<Eigen::Index>(i * cols + c)) = cells[i][c].transpose();
    }
  }

  CompositionalityResult r;
  for (std::size_t k = 0; k < cols; ++k)
    for (std::size_t l = k + 1; l < cols; ++l)
      for (std::size_t i = 0; i < rows; ++i) {
        const VectorXd offset = cells[i][l] - cells[i][k];
        for (std::size_t j = 0; j < rows; ++j) {
          const VectorXd query = offset + cells[j][k];
          Eigen::Index best;
          (all.rowwise() - query.transpose()).rowwise().squaredNorm().minCoeff(&best);
          ++r.applications;
          if (best == static_cast<Eigen::Index>(j * cols + l)) ++r.successes;
        }
      }
  return r;
}

json EvalReport::to_json() const {
  json tk = json::object(), per = json::object();
  for (auto [k, v] : top_k) tk[std::to_string(k)] = v;
  for (auto [c, v] : per_table_accuracy) per[std::to_string(c)] = v;
  return {{"version", kReportVersion},
          {"top_k", tk},
          {"per_table_accuracy", per},
          {"compositionality",
           {{"rate", compositionality.rate()},
            {"successes", compositionality.successes},
            {"applications", compositionality.applications},
            {"tables", compositionality_tables}}},
          {"counts", {{"labeled", labeled}, {"pairs", pairs}, {"equation_applications", compositionality.applications}}}};
}

std::string ramp_color(double t) {
  const int step = static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  const double u = step / 255.0;
  // white (255,255,255) to (8,48,107)
  const int r = static_cast<int>(std::lround(255 + (8 - 255) * u));
  const int g = static_cast<int>(std::lround(255 + (48 - 255) * u));
  const int b = static_cast<int>(std::lround(255 + (107 - 255) * u));
  std::ostringstream s;
  s << '#' << std::hex << std::setfill('0') << std::setw(2) << r << std::setw(2) << g << std::setw(2) << b;
  return s.str();
}

std::string overlay_svg(const graph::PageGraph& g, const Eigen::Ref<const VectorXd>& weights, int query) {
  if (weights.size() != g.size()) throw ValidationError("overlay: weight count does not match the span count");
  if (query < 0 || query >= g.size()) throw ValidationError("overlay: query span out of range");
  double w = 0, h = 0;
  for (const auto& s : g.vertices) {
    w = std::max(w, s.bbox.x1);
    h = std::max(h, s.bbox.y1);
  }
  const double peak = weights.maxCoeff();
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 20 << "\" height=\"" << h + 20
      << "\" viewBox=\"0 0 " << w + 20 << ' ' << h + 20 << "\">\n";
  for (int i = 0; i < g.size(); ++i) {
    const auto& b = g.vertices[i].bbox;
    const double t = peak > 0 ? weights(i) / peak : 0.0;
    svg << "<rect class=\"span\" x=\"" << b.x0 << "\" y=\"" << b.y0 << "\" width=\"" << b.width() << "\" height=\""
        << b.height() << "\" fill=\"" << ramp_color(t) << "\" stroke=\"" << (i == query ? "#d62728" : "#7f7f7f")
        << "\" stroke-width=\"" << (i == query ? 2.0 : 0.5) << "\"><title>" << i << ": "
        << xml_escape(g.vertices[i].text()) << " (" << weights(i) << ")</title></rect>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string embeddings_csv(const graph::PageGraph& g, const MatrixXd& e) {
  if (e.rows() != g.size()) throw ValidationError("embedding rows do not match the vertex count");
  std::ostringstream out;
  out << "span_id,page_id";
  for (Eigen::Index c = 0; c < e.cols(); ++c) out << ",e" << c;
  out << '\n' << std::setprecision(9);
  for (int i = 0; i < g.size(); ++i) {
    out << g.vertices[i].span_id << ',' << g.vertices[i].page_id();
    for (Eigen::Index c = 0; c < e.cols(); ++c) out << ',' << e(i, c);
    out << '\n';
  }
  return out.str();
}

}  // namespace spanflow::eval
