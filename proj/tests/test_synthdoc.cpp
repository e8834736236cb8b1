#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>
#include <unistd.h>

#include "spanflow/common.hpp"
#include "spanflow/featurize.hpp"
#include "spanflow/layout.hpp"
#include "spanflow/pagegraph.hpp"
#include "spanflow/synthdoc.hpp"

using namespace spanflow;
using synth::CorpusSpec;
using synth::Layout;

namespace {

CorpusSpec quiet_spec(std::uint64_t seed, Layout only) {
  CorpusSpec s;
  s.seed = seed;
  s.noise = 0;
  s.layout_mix = {0, 0, 0};
  s.layout_mix[static_cast<int>(only)] = 1;
  return s;
}

std::vector<std::string> masked(const layout::Span& s) {
  std::vector<std::string> out;
  for (const auto& t : s.tokens)
    for (auto& m : features::mask_token(t.text)) out.push_back(m);
  return out;
}

bool overlaps(const layout::BBox& a, const layout::BBox& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

void check_segmentation(const synth::GeneratedPage& page) {
  const auto spans = layout::segment_page(page.tokens);
  REQUIRE(spans.size() == page.spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CHECK(spans[i].span_id == page.spans[i].span_id);
    CHECK(spans[i].text() == page.spans[i].text());
    CHECK(spans[i].bbox == page.spans[i].bbox);
  }
}

}  // namespace

TEST_CASE("pairs are a pure function of seed and index") {
  CorpusSpec s;
  s.seed = 99;
  const auto a = synth::generate_pair(s, 3);
  const auto b = synth::generate_pair(s, 3);
  CHECK(layout::tokens_to_jsonl(a.page1.tokens) == layout::tokens_to_jsonl(b.page1.tokens));
  CHECK(layout::tokens_to_jsonl(a.page2.tokens) == layout::tokens_to_jsonl(b.page2.tokens));
  CHECK(a.labels.to_json() == b.labels.to_json());
  const auto c = synth::generate_pair(s, 4);
  CHECK(layout::tokens_to_jsonl(a.page1.tokens) != layout::tokens_to_jsonl(c.page1.tokens));
}

TEST_CASE("segmentation recovers the intended spans on every layout") {
  for (int l = 0; l < 3; ++l)
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      CorpusSpec s;
      s.seed = seed;
      s.layout_mix = {0, 0, 0};
      s.layout_mix[l] = 1;
      s.noise = 0.3;
      const auto gp = synth::generate_pair(s, 0);
      CAPTURE(l);
      CAPTURE(seed);
      check_segmentation(gp.page1);
      check_segmentation(gp.page2);
    }
}

TEST_CASE("paper-scale pages segment cleanly") {
  const auto s = CorpusSpec::paper_scale(5);
  for (int i = 0; i < 6; ++i) {
    const auto gp = synth::generate_pair(s, i);
    check_segmentation(gp.page1);
    check_segmentation(gp.page2);
  }
}

TEST_CASE("boxes never overlap and stay on the canvas") {
  CorpusSpec s;
  s.seed = 12;
  s.rows_max = 35;
  s.rows_min = 30;
  s.cols_max = 4;
  s.cols_min = 4;
  s.noise = 1.0;
  for (int i = 0; i < 10; ++i) {
    const auto gp = synth::generate_pair(s, i);
    for (const auto* page : {&gp.page1, &gp.page2}) {
      for (std::size_t a = 0; a < page->tokens.size(); ++a) {
        const auto& ba = page->tokens[a].bbox;
        CHECK(ba.x0 >= 0);
        CHECK(ba.y0 >= 0);
        CHECK(ba.x1 <= synth::kCanvasWidth);
        CHECK(ba.y1 <= synth::kCanvasHeight);
        for (std::size_t b = a + 1; b < page->tokens.size(); ++b) CHECK_FALSE(overlaps(ba, page->tokens[b].bbox));
      }
    }
  }
}

TEST_CASE("labeled cells carry the same masked content on both pages") {
  for (int l = 0; l < 3; ++l) {
    CorpusSpec s;
    s.seed = 40 + l;
    s.layout_mix = {0, 0, 0};
    s.layout_mix[l] = 1;
    for (int i = 0; i < 5; ++i) {
      const auto gp = synth::generate_pair(s, i);
      for (const auto& [a, p] : gp.labels.pairs) {
        const auto& sa = gp.page1.spans.at(a);
        const auto& sp = gp.page2.spans.at(p);
        CHECK(sa.text() == sp.text());
        CHECK(masked(sa) == masked(sp));
      }
    }
  }
}

TEST_CASE("table counts without noise") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto gp = synth::generate_pair(quiet_spec(seed, Layout::Table), 0);
    const int rows = gp.rows, cols = gp.columns;
    const int headings = gp.sections > 1 ? gp.sections : 0;
    CAPTURE(seed);
    CHECK(static_cast<int>(gp.labels.pairs.size()) == rows * cols);
    // title, column headers, section headings, label plus value cells
    const std::size_t expected = 1 + cols + headings + rows * (cols + 1);
    CHECK(gp.page1.spans.size() == expected);
    CHECK(gp.page2.spans.size() == expected);
    CHECK(gp.grid.size() == static_cast<std::size_t>(rows));
    std::set<int> anchors, positives;
    for (const auto& [a, p] : gp.labels.pairs) {
      anchors.insert(a);
      positives.insert(p);
    }
    CHECK(anchors.size() == gp.labels.pairs.size());
    CHECK(positives.size() == gp.labels.pairs.size());
  }
}

TEST_CASE("grid cells are value spans laid out left to right") {
  const auto gp = synth::generate_pair(quiet_spec(3, Layout::List), 0);
  for (const auto& row : gp.grid) {
    REQUIRE(row.size() == static_cast<std::size_t>(gp.columns));
    for (std::size_t c = 1; c < row.size(); ++c) {
      const auto& left = gp.page1.spans[row[c - 1]].bbox;
      const auto& right = gp.page1.spans[row[c]].bbox;
      CHECK(left.x1 < right.x0);
      CHECK(left.y0 == right.y0);
    }
  }
}

TEST_CASE("page-2 rows are reordered") {
  int moved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto gp = synth::generate_pair(quiet_spec(seed, Layout::Table), 0);
    for (std::size_t i = 1; i < gp.labels.pairs.size(); ++i)
      if (gp.labels.pairs[i].second < gp.labels.pairs[i - 1].second) ++moved;
  }
  CHECK(moved > 0);
}

TEST_CASE("row labels are unique within a page") {
  CorpusSpec s;
  s.seed = 8;
  s.section_p = 1.0;
  s.rows_min = 30;
  s.rows_max = 35;
  s.noise = 0;
  for (int i = 0; i < 5; ++i) {
    const auto gp = synth::generate_pair(s, i);
    CHECK(gp.sections >= 2);
    std::set<std::string> labels;
    for (const auto& row : gp.grid) labels.insert(gp.page1.spans[row.front() - 1].text());
    CHECK(labels.size() == gp.grid.size());
  }
}

TEST_CASE("paragraph pages are one span per line") {
  const auto pp = synth::generate_paragraph_page(17, 4);
  const auto spans = layout::segment_page(pp.page.tokens);
  CHECK(spans.size() == pp.page.spans.size());
  CHECK(pp.paragraph_of.size() == spans.size());
  CHECK(pp.paragraph_of.back() == 3);
  for (const auto& sp : spans) CHECK(sp.tokens.size() >= 10);
  const auto g = graph::build_page_graph(spans);
  CHECK(g.size() == static_cast<int>(spans.size()));
}

TEST_CASE("corpus directory and manifest") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("spanflow_synth_" + std::to_string(::getpid()));
  CorpusSpec s;
  s.seed = 21;
  s.pages = 12;
  const auto sum = synth::generate_corpus(s, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "pair0000_p1.jsonl"));
  CHECK(fs::exists(dir / "pair0011_labels.json"));
  CHECK(sum.layout_counts[0] + sum.layout_counts[1] + sum.layout_counts[2] == 12);
  CHECK(sum.dof == 2);
  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(m["pairs"].size() == 12);
  CHECK(m["total_labels"].get<long>() == sum.labels);
  CHECK(CorpusSpec::from_json(m["spec_echo"]).to_json() == s.to_json());
  const auto labels = train::load_labels(dir / "pair0004_labels.json");
  const auto tokens = layout::parse_tokens_jsonl(read_file(dir / labels.graph1_id));
  const auto gp = synth::generate_pair(s, 4);
  CHECK(layout::tokens_to_jsonl(tokens) == layout::tokens_to_jsonl(gp.page1.tokens));
  CHECK(labels.pairs == gp.labels.pairs);

  // a second run replaces the directory wholesale
  s.pages = 2;
  synth::generate_corpus(s, dir);
  CHECK_FALSE(fs::exists(dir / "pair0011_labels.json"));
  fs::remove_all(dir);
}

TEST_CASE("chi-square against the mix") {
  int dof = 0;
  CHECK(synth::layout_chi_square({10, 10, 10}, {1, 1, 1}, &dof) == doctest::Approx(0.0));
  CHECK(dof == 2);
  // expected 10 each: (20-10)^2/10 + (5-10)^2/10 + (5-10)^2/10
  CHECK(synth::layout_chi_square({20, 5, 5}, {1, 1, 1}) == doctest::Approx(15.0));
  CHECK(synth::layout_chi_square({0, 0, 30}, {0, 0, 1}, &dof) == doctest::Approx(0.0));
  CHECK(dof == 0);
}

TEST_CASE("layout frequencies follow the mix") {
  CorpusSpec s;
  s.seed = 77;
  s.layout_mix = {1, 2, 1};
  std::array<int, 3> counts{};
  for (int i = 0; i < 400; ++i) ++counts[static_cast<int>(synth::generate_pair(s, i).page2.layout)];
  int dof = 0;
  // 99.9th percentile of chi-square with 2 degrees of freedom
  CHECK(synth::layout_chi_square(counts, s.layout_mix, &dof) < 13.82);
}

TEST_CASE("spec validation") {
  CorpusSpec s;
  CHECK_NOTHROW(s.validate());
  s.rows_max = 60;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.layout_mix = {0, 0, 0};
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.cols_min = 1;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.vocabulary = {"revenue", "net income"};
  s.rows_max = 2;
  s.rows_min = 2;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.pages = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  CHECK_THROWS_AS(CorpusSpec::from_json(nlohmann::json{{"pages", "many"}}), ValidationError);
}
