#include "spanflow/pagegraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "spanflow/common.hpp"

namespace spanflow::graph {

using nlohmann::json;

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "?";
}

const HopMatrices& PageGraph::require_hops() const {
  if (!hops) throw ValidationError("page graph has no hop matrices; run hop_matrices first");
  return *hops;
}

namespace {

double overlap(double a0, double a1, double b0, double b1) { return std::min(a1, b1) - std::max(a0, b0); }

// Gap from a to b along direction d, or nullopt when b is not a candidate.
std::optional<double> directional_gap(const layout::BBox& a, const layout::BBox& b, Direction d) {
  switch (d) {
    case Direction::Up:
      if (overlap(a.x0, a.x1, b.x0, b.x1) > 0 && b.y1 <= a.y0) return a.y0 - b.y1;
      break;
    case Direction::Down:
      if (overlap(a.x0, a.x1, b.x0, b.x1) > 0 && b.y0 >= a.y1) return b.y0 - a.y1;
      break;
    case Direction::Left:
      if (overlap(a.y0, a.y1, b.y0, b.y1) > 0 && b.x1 <= a.x0) return a.x0 - b.x1;
      break;
    case Direction::Right:
      if (overlap(a.y0, a.y1, b.y0, b.y1) > 0 && b.x0 >= a.x1) return b.x0 - a.x1;
      break;
  }
  return std::nullopt;
}

constexpr std::array<std::array<int, 2>, 4> kStep = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

}  // namespace

PageGraph build_edges(std::vector<layout::Span> spans) {
  if (spans.empty()) throw ValidationError("build_edges: no spans");
  std::stable_sort(spans.begin(), spans.end(),
                   [](const layout::Span& a, const layout::Span& b) { return a.span_id < b.span_id; });
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].span_id == spans[i - 1].span_id)
      throw ValidationError("build_edges: duplicate span_id " + std::to_string(spans[i].span_id));

  PageGraph g;
  const int n = static_cast<int>(spans.size());
  g.vertices = std::move(spans);
  g.neighbors.assign(n, {-1, -1, -1, -1});
  g.adjacency = IntMatrix::Identity(n, n);
  g.block_sizes = {n};

  for (int i = 0; i < n; ++i) {
    for (Direction d : kDirections) {
      int best = -1;
      double best_gap = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        auto gap = directional_gap(g.vertices[i].bbox, g.vertices[j].bbox, d);
        // j ascends, so strict < keeps the smaller id on ties.
        if (gap && (best < 0 || *gap < best_gap)) {
          best = j;
          best_gap = *gap;
        }
      }
      g.neighbors[i][static_cast<int>(d)] = best;
      if (best >= 0) g.adjacency(i, best) = 1;
    }
  }
  return g;
}

HopMatrices hop_matrices(const PageGraph& g) {
  const int n = g.size();
  HopMatrices h{IntMatrix::Constant(n, n, kUnreachable), IntMatrix::Constant(n, n, kUnreachable)};
  std::deque<int> queue;
  for (int s = 0; s < n; ++s) {
    h.vert(s, s) = 0;
    h.hor(s, s) = 0;
    queue.assign(1, s);
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (int d = 0; d < 4; ++d) {
        int v = g.neighbors[u][d];
        if (v < 0 || h.vert(s, v) != kUnreachable) continue;
        h.vert(s, v) = h.vert(s, u) + kStep[d][0];
        h.hor(s, v) = h.hor(s, u) + kStep[d][1];
        queue.push_back(v);
      }
    }
  }
  return h;
}

PageGraph build_page_graph(std::vector<layout::Span> spans) {
  PageGraph g = build_edges(std::move(spans));
  g.hops = hop_matrices(g);
  return g;
}

IntMatrix expand_neighborhood(const PageGraph& g, int x, NeighborhoodRule rule) {
  if (x < 1) throw ValidationError("neighborhood order must be >= 1, got " + std::to_string(x));
  if (rule == NeighborhoodRule::And && x == 1) return g.adjacency;
  const auto& h = g.require_hops();
  const int n = g.size();
  IntMatrix a = IntMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!h.reachable(i, j)) continue;
      const bool v_ok = std::abs(h.vert(i, j)) <= x;
      const bool h_ok = std::abs(h.hor(i, j)) <= x;
      a(i, j) = rule == NeighborhoodRule::And ? (v_ok && h_ok) : (v_ok || h_ok);
    }
  return a;
}

IntMatrix near_mask(const PageGraph& g) {
  const auto& h = g.require_hops();
  const int n = g.size();
  IntMatrix m = IntMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!h.reachable(i, j)) continue;
      const long dv = h.vert(i, j), dh = h.hor(i, j);
      m(i, j) = dv * dv + dh * dh <= 1;
    }
  return m;
}

PageGraph bind_pair(const PageGraph& g1, const PageGraph& g2) {
  const auto& h1 = g1.require_hops();
  const auto& h2 = g2.require_hops();
  const int n1 = g1.size(), n2 = g2.size(), n = n1 + n2;

  PageGraph g;
  g.vertices = g1.vertices;
  g.vertices.insert(g.vertices.end(), g2.vertices.begin(), g2.vertices.end());
  g.neighbors = g1.neighbors;
  for (auto nb : g2.neighbors) {
    for (int& v : nb)
      if (v >= 0) v += n1;
    g.neighbors.push_back(nb);
  }
  g.adjacency = IntMatrix::Zero(n, n);
  g.adjacency.topLeftCorner(n1, n1) = g1.adjacency;
  g.adjacency.bottomRightCorner(n2, n2) = g2.adjacency;

  HopMatrices h{IntMatrix::Constant(n, n, kUnreachable), IntMatrix::Constant(n, n, kUnreachable)};
  h.vert.topLeftCorner(n1, n1) = h1.vert;
  h.hor.topLeftCorner(n1, n1) = h1.hor;
  h.vert.bottomRightCorner(n2, n2) = h2.vert;
  h.hor.bottomRightCorner(n2, n2) = h2.hor;
  g.hops = std::move(h);

  g.block_sizes = g1.block_sizes;
  g.block_sizes.insert(g.block_sizes.end(), g2.block_sizes.begin(), g2.block_sizes.end());
  return g;
}

json graph_to_json(const PageGraph& g) {
  json vertices = json::array();
  for (const auto& s : g.vertices) vertices.push_back(layout::span_to_json(s));
  json edges = json::array();
  json neighbors = json::array();
  for (int i = 0; i < g.size(); ++i) {
    json nb = json::object();
    for (Direction d : kDirections) {
      int j = g.neighbor(i, d);
      nb[direction_name(d)] = j >= 0 ? json(j) : json(nullptr);
    }
    neighbors.push_back(std::move(nb));
    for (int j = 0; j < g.size(); ++j)
      if (g.adjacency(i, j) && i != j) edges.push_back({i, j});
  }
  json out = {{"format", "spanflow.graph"}, {"version", 1}, {"vertices", std::move(vertices)},
              {"edges", std::move(edges)},   {"neighbors", std::move(neighbors)},
              {"block_sizes", g.block_sizes}};
  if (g.hops) {
    json pv = json::array(), ph = json::array();
    for (int i = 0; i < g.size(); ++i)
      for (int j = 0; j < g.size(); ++j)
        if (g.hops->reachable(i, j)) {
          pv.push_back({i, j, g.hops->vert(i, j)});
          ph.push_back({i, j, g.hops->hor(i, j)});
        }
    out["p_vert"] = std::move(pv);
    out["p_hor"] = std::move(ph);
  }
  return out;
}

std::string graph_to_svg(const PageGraph& g) {
  double w = 0, h = 0;
  for (const auto& s : g.vertices) {
    w = std::max(w, s.bbox.x1);
    h = std::max(h, s.bbox.y1);
  }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 20 << "\" height=\"" << h + 20
      << "\" viewBox=\"0 0 " << w + 20 << ' ' << h + 20 << "\">\n"
      << "<defs><marker id=\"arrow\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" "
         "orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"#c0392b\"/></marker></defs>\n";
  for (int i = 0; i < g.size(); ++i) {
    const auto& b = g.vertices[i].bbox;
    svg << "<rect x=\"" << b.x0 << "\" y=\"" << b.y0 << "\" width=\"" << b.width() << "\" height=\""
        << b.height() << "\" fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"0.8\"><title>" << i << ": "
        << xml_escape(g.vertices[i].text()) << "</title></rect>\n";
  }
  for (int i = 0; i < g.size(); ++i)
    for (Direction d : kDirections) {
      int j = g.neighbor(i, d);
      if (j < 0) continue;
      const auto& a = g.vertices[i].bbox;
      const auto& b = g.vertices[j].bbox;
      svg << "<line x1=\"" << a.cx() << "\" y1=\"" << a.cy() << "\" x2=\"" << b.cx() << "\" y2=\"" << b.cy()
          << "\" stroke=\"#c0392b\" stroke-width=\"0.6\" marker-end=\"url(#arrow)\"/>\n";
    }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace spanflow::graph
