#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spanflow/layout.hpp"
#include "spanflow/train.hpp"

namespace spanflow::synth {

inline constexpr double kCanvasWidth = 1000;
inline constexpr double kCanvasHeight = 1400;

enum class Layout { Paragraph = 0, List = 1, Table = 2 };
const char* layout_name(Layout l);

struct CorpusSpec {
  std::uint64_t seed = 0;
  int pages = 10;  // number of page pairs
  // Weights for the page-2 rendering; page 1 is always a table.
  std::array<double, 3> layout_mix = {1.0, 1.0, 1.0};  // paragraph, list, table
  int rows_min = 4, rows_max = 35;  // value rows per table, all sections together
  int cols_min = 2, cols_max = 4;   // value columns
  int sections_max = 3;             // tables may be split under several headings
  double section_p = 0.5;           // chance a table is split into sections
  double noise = 0.1;               // chance of a distractor line at each slot
  std::vector<std::string> vocabulary;  // row labels; empty selects the built-in pool

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j);
  // About 100 vertices per page and ~7000 labels over 70 pairs.
  static CorpusSpec paper_scale(std::uint64_t seed);
};

const std::vector<std::string>& default_vocabulary();

struct GeneratedPage {
  std::string page_id;
  Layout layout = Layout::Table;
  std::vector<layout::Token> tokens;
  std::vector<layout::Span> spans;  // intended segmentation, ids in reading order
};

struct GeneratedPair {
  GeneratedPage page1, page2;
  train::LabeledPair labels;  // span ids; graph ids are the page ids
  int rows = 0, columns = 0, sections = 0;
  std::vector<std::vector<int>> grid;  // page-1 value span ids [row][column]
};

// Pure function of (spec, pair_index).
GeneratedPair generate_pair(const CorpusSpec& spec, int pair_index);

// Prose only: paragraphs of wrapped lines, each line one span.
struct ParagraphPage {
  GeneratedPage page;
  std::vector<int> paragraph_of;  // per span id
};
ParagraphPage generate_paragraph_page(std::uint64_t seed, int paragraphs = 4);

struct CorpusSummary {
  std::array<int, 3> layout_counts{};
  double chi_square = 0;
  int dof = 0;
  long labels = 0;
  double mean_vertices = 0;
  nlohmann::json manifest;
};

// Writes pairNNNN_p1.jsonl, pairNNNN_p2.jsonl, pairNNNN_labels.json and
// manifest.json into `dir`, replacing it as a whole.
CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

// Pearson statistic of observed layout counts against the mix weights.
double layout_chi_square(const std::array<int, 3>& counts, const std::array<double, 3>& weights, int* dof = nullptr);

}  // namespace spanflow::synth
