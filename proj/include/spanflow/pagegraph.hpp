#pragma once

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/layout.hpp"

namespace spanflow::graph {

enum class Direction : int { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr std::array<Direction, 4> kDirections = {Direction::Up, Direction::Down,
                                                         Direction::Left, Direction::Right};
const char* direction_name(Direction d);

// Dense hop matrices store this where no axis path exists. Sparse exports
// omit the entry instead.
inline constexpr int kUnreachable = std::numeric_limits<int>::max();

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct HopMatrices {
  IntMatrix vert;  // signed vertical hops, down positive
  IntMatrix hor;   // signed horizontal hops, right positive

  bool reachable(int i, int j) const { return vert(i, j) != kUnreachable; }
};

struct PageGraph {
  std::vector<layout::Span> vertices;       // index = vertex id
  std::vector<std::array<int, 4>> neighbors;  // per Direction, -1 when absent
  IntMatrix adjacency;                      // order-1 neighborhood incl. self
  std::optional<HopMatrices> hops;
  std::vector<int> block_sizes;             // one entry per bound sub-graph

  int size() const { return static_cast<int>(vertices.size()); }
  int neighbor(int v, Direction d) const { return neighbors[v][static_cast<int>(d)]; }
  const HopMatrices& require_hops() const;
};

// Directed reading-pattern edges: for every span and direction the nearest
// span lying strictly beyond it on that axis with positive overlap on the
// perpendicular axis. Ties go to the smaller span_id. Spans must carry
// unique span_ids; vertices are ordered by span_id.
PageGraph build_edges(std::vector<layout::Span> spans);

// BFS over directional edges with fixed expansion order up, down, left,
// right; entries hold the net displacement of the first shortest path.
HopMatrices hop_matrices(const PageGraph& g);

// build_edges followed by hop_matrices.
PageGraph build_page_graph(std::vector<layout::Span> spans);

enum class NeighborhoodRule {
  And,        // |P_vert| <= x and |P_hor| <= x
  LiteralOr,  // |P_vert| <= x or |P_hor| <= x
};

// Order-x inclusion mask. With the And rule x = 1 returns the order-1
// adjacency itself (the five-vertex neighborhood); larger x uses the
// hop-space ball. Throws ValidationError for x < 1.
IntMatrix expand_neighborhood(const PageGraph& g, int x, NeighborhoodRule rule = NeighborhoodRule::And);

// 1 where sqrt(P_vert^2 + P_hor^2) <= 1, the pairs whose value vectors
// survive the distance regularization.
IntMatrix near_mask(const PageGraph& g);

// Disjoint union; g2's ids are offset by |V1| and no cross edges exist.
PageGraph bind_pair(const PageGraph& g1, const PageGraph& g2);

nlohmann::json graph_to_json(const PageGraph& g);
std::string graph_to_svg(const PageGraph& g);

}  // namespace spanflow::graph
