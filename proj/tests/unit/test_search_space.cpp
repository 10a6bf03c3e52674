#include <gtest/gtest.h>

#include <cmath>
#include <queue>

#include "mstar/search_space.hpp"
#include "support/oracles.hpp"

using namespace mstar;

namespace {

constexpr int kConv = static_cast<int>(OpKind::Conv);
constexpr int kMax = static_cast<int>(OpKind::MaxPool);
constexpr int kId = static_cast<int>(OpKind::Identity);

CellMatrix minimal_cell() {
  CellMatrix m;
  m.at(kConv, 0, 12) = 3;
  return m;
}

// Breadth-first reachability on the raw matrix.
std::vector<bool> bfs_reachable(const CellMatrix& m) {
  std::vector<bool> seen(kNumNodes, false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    for (int j = 0; j < kNumNodes; ++j)
      for (int c = 0; c < kNumOps; ++c)
        if (m.at(c, i, j) != 0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = true;
          q.push(j);
        }
  }
  return seen;
}

}  // namespace

TEST(Validate, AllZeroMatrixIsUnreachable) {
  const auto r = validate(CellMatrix{});
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.has_rule("output-unreachable"));
}

TEST(Validate, SingleInputToOutputEdgeIsValid) {
  const auto r = validate(minimal_cell());
  EXPECT_TRUE(r.valid) << r.summary();
  EXPECT_TRUE(r.violations.empty());
}

TEST(Validate, SameLayerEdgeRejected) {
  CellMatrix m = minimal_cell();
  m.at(kConv, 2, 3) = 3;
  const auto r = validate(m);
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.has_rule("same-layer"));
}

TEST(Validate, ReportsEveryViolatedRule) {
  CellMatrix m = minimal_cell();
  m.at(kConv, 5, 1) = 3;    // below diagonal
  m.at(kConv, 0, 7) = 7;    // kernel not in the conv set
  m.at(kConv, 1, 9) = 3;    // two ops on one slot
  m.at(kMax, 1, 9) = 5;
  m.at(kId, 0, 4) = 2;      // identity must be 1
  const auto r = validate(m);
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.has_rule("triangular"));
  EXPECT_TRUE(r.has_rule("kernel"));
  EXPECT_TRUE(r.has_rule("one-op-per-edge"));
  EXPECT_GE(r.violations.size(), 4u);
}

TEST(Validate, IdentityRestrictionFlag) {
  CellMatrix m = minimal_cell();
  m.at(kId, 0, 4) = 1;
  SpaceConfig cfg;
  EXPECT_TRUE(validate(m, cfg).valid);
  cfg.identity_any_layer = false;
  EXPECT_TRUE(validate(m, cfg).has_rule("identity-layer"));
}

TEST(Validate, OrphanPathAloneReachesOutput) {
  CellMatrix m;
  m.at(kConv, 0, 5) = 3;
  EXPECT_TRUE(validate(m).valid);
}

TEST(Preprocess, ChannelIsMinimumOfPredecessors) {
  CellMatrix m;
  m.at(kConv, 0, 2) = 3;   // node 2: bottleneck (32)
  m.at(kConv, 0, 4) = 3;   // node 4: 128
  m.at(kConv, 2, 9) = 3;
  m.at(kConv, 4, 9) = 3;
  m.at(kId, 9, 12) = 1;
  const auto g = preprocess(m);
  EXPECT_EQ(g.nodes[2].width, 32);
  EXPECT_EQ(g.nodes[4].width, 128);
  EXPECT_EQ(g.nodes[9].width, 32);
  EXPECT_EQ(g.nodes[12].width, 128);
}

TEST(Preprocess, OrphanEntersAggregationPlan) {
  CellMatrix m = minimal_cell();
  m.at(kConv, 0, 5) = 5;
  const auto g = preprocess(m);
  EXPECT_TRUE(g.nodes[5].orphan);
  EXPECT_EQ(g.aggregation, std::vector<int>{5});
}

TEST(Preprocess, MinimalCellHasNoAggregation) {
  const auto m = minimal_cell();
  const auto g = preprocess(m);
  const auto reach = bfs_reachable(m);
  int unused = 0;
  for (int n = 1; n < kOutputNode; ++n) unused += !g.nodes[static_cast<std::size_t>(n)].orphan;
  EXPECT_EQ(unused, 11);
  for (int n : g.aggregation) EXPECT_TRUE(reach[static_cast<std::size_t>(n)]);
  EXPECT_TRUE(g.aggregation.empty());
}

TEST(Preprocess, RejectsInvalidMatrixWithReport) {
  try {
    preprocess(CellMatrix{});
    FAIL() << "expected InvalidCellError";
  } catch (const InvalidCellError& e) {
    EXPECT_TRUE(e.report().has_rule("output-unreachable"));
  }
}

TEST(Preprocess, PropertiesOverRandomCells) {
  SpaceConfig cfg;
  Rng rng = make_rng(11);
  for (int s = 0; s < 1000; ++s) {
    const auto m = random_cell(cfg, rng);
    const auto g = preprocess(m, cfg);
    const auto reach = bfs_reachable(m);
    // idempotence through re-encoding
    ASSERT_TRUE(validate(g.encode(), cfg).valid);
    ASSERT_EQ(preprocess(g.encode(), cfg), g);
    for (int j = 1; j < kOutputNode; ++j) {
      const auto& node = g.nodes[static_cast<std::size_t>(j)];
      ASSERT_EQ(node.reachable, reach[static_cast<std::size_t>(j)]);
      if (!node.reachable) continue;
      int expect = cfg.node_widths[static_cast<std::size_t>(j)];
      for (int i = 0; i < j; ++i)
        if (m.has_edge(i, j) && reach[static_cast<std::size_t>(i)])
          expect = std::min(expect, g.nodes[static_cast<std::size_t>(i)].width);
      ASSERT_EQ(node.width, expect) << "node " << j;
      bool has_out = false;
      for (int k = j + 1; k < kNumNodes; ++k) has_out = has_out || m.has_edge(j, k);
      ASSERT_EQ(node.orphan, !has_out);
    }
  }
}

TEST(RandomCell, DeterministicPerSeed) {
  SpaceConfig cfg;
  Rng a = make_rng(7), b = make_rng(7);
  EXPECT_EQ(random_cell(cfg, a), random_cell(cfg, b));
}

TEST(RandomCell, ZeroProbabilityStillReachable) {
  SpaceConfig cfg;
  cfg.edge_probability = 0.0;
  Rng rng = make_rng(3);
  for (int s = 0; s < 50; ++s) {
    const auto m = random_cell(cfg, rng);
    EXPECT_TRUE(validate(m, cfg).valid);
    int edges = 0;
    for (const auto& [i, j] : legal_slots()) edges += m.has_edge(i, j);
    EXPECT_EQ(edges, 1);
  }
}

TEST(RandomCell, EdgeDensityMatchesProbability) {
  SpaceConfig cfg;
  cfg.edge_probability = 0.3;
  Rng rng = make_rng(5);
  long edges = 0, slots = 0;
  for (int s = 0; s < 10000; ++s) {
    const auto m = random_cell(cfg, rng);
    ASSERT_TRUE(validate(m, cfg).valid);
    // repair only ever touches row 0
    for (const auto& [i, j] : legal_slots())
      if (i > 0) {
        ++slots;
        edges += m.has_edge(i, j);
      }
  }
  EXPECT_NEAR(static_cast<double>(edges) / static_cast<double>(slots), 0.3, 0.03);
}

TEST(Mutate, ZeroFractionIsIdentity) {
  SpaceConfig cfg;
  Rng rng = make_rng(1);
  const auto m = random_cell(cfg, rng);
  EXPECT_EQ(mutate(m, 0.0, cfg, rng), m);
}

TEST(Mutate, ResamplesCeilFractionOfSlots) {
  SpaceConfig cfg;
  Rng rng = make_rng(2);
  const auto E = legal_slots().size();
  EXPECT_EQ(E, 58u);
  const auto expected = static_cast<std::size_t>(std::ceil(0.15 * static_cast<double>(E)));
  for (int s = 0; s < 200; ++s) {
    const auto m = random_cell(cfg, rng);
    MutationTrace trace;
    const auto out = mutate(m, 0.15, cfg, rng, &trace);
    ASSERT_EQ(trace.resampled.size(), expected);
    ASSERT_EQ(static_cast<std::size_t>(slot_difference(m, trace.before_repair)), expected);
    ASSERT_TRUE(validate(out, cfg).valid);
  }
}

TEST(Mutate, FullFractionChangesAtLeastHalfTheSlots) {
  SpaceConfig cfg;
  const auto E = static_cast<int>(legal_slots().size());
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed);
    const auto m = random_cell(cfg, rng);
    const auto out = mutate(m, 1.0, cfg, rng);
    ASSERT_TRUE(validate(out, cfg).valid);
    int diff = 0;  // brute-force count over raw entries grouped by slot
    for (int i = 0; i < kNumNodes; ++i)
      for (int j = 0; j < kNumNodes; ++j) {
        bool d = false;
        for (int c = 0; c < kNumOps; ++c) d = d || m.at(c, i, j) != out.at(c, i, j);
        diff += d;
      }
    ASSERT_GE(diff, E / 2) << "seed " << seed;
  }
}

TEST(ReceptiveFields, SingleEdge) {
  CellMatrix m;
  m.at(kConv, 0, 7) = 9;
  m.at(kId, 7, 12) = 1;
  EXPECT_EQ(receptive_fields(preprocess(m))[7], (RfSet{9}));
}

TEST(ReceptiveFields, SeriesComposition) {
  CellMatrix m;
  m.at(kConv, 0, 2) = 3;
  m.at(kConv, 2, 7) = 5;
  m.at(kId, 7, 12) = 1;
  EXPECT_EQ(receptive_fields(preprocess(m))[7], (RfSet{7}));
}

TEST(ReceptiveFields, Table6StyleNode) {
  const auto m = oracle::table6_style_cell();
  const auto rf = receptive_fields(preprocess(m));
  EXPECT_EQ(rf[7], (RfSet{1, 3, 17, 27, 39}));
  EXPECT_EQ(oracle::impulse_receptive_fields(m, 1)[7], (std::set<int>{1, 3, 17, 27, 39}));
}

TEST(ReceptiveFields, MatchesImpulseOracleOnRandomCells) {
  SpaceConfig cfg;
  Rng rng = make_rng(21);
  for (int s = 0; s < 30; ++s) {
    const auto m = random_cell(cfg, rng);
    const auto g = preprocess(m, cfg);
    for (int depth = 1; depth <= 2; ++depth) {
      const auto analytic = receptive_fields(g, depth);
      const auto oracle = oracle::impulse_receptive_fields(m, depth);
      for (int n = 0; n < kNumNodes; ++n)
        ASSERT_EQ(analytic[static_cast<std::size_t>(n)], oracle[static_cast<std::size_t>(n)])
            << "sample " << s << " depth " << depth << " node " << n;
    }
  }
}

TEST(Serialize, RoundTripMinimalCell) {
  const auto m = minimal_cell();
  EXPECT_EQ(parse_cell(canonical_serialize(m)), m);
}

TEST(Serialize, RoundTripAndByteStableOnRandomCorpus) {
  SpaceConfig cfg;
  Rng rng = make_rng(99);
  for (int s = 0; s < 1000; ++s) {
    const auto m = random_cell(cfg, rng);
    const auto text = canonical_serialize(m);
    ASSERT_EQ(parse_cell(text), m);
    ASSERT_EQ(canonical_serialize(parse_cell(text)), text);
  }
}

TEST(Serialize, IllegalKernelReportsPosition) {
  auto doc = cell_to_json(minimal_cell());
  doc["ops"][0][1][4] = 7;
  try {
    parse_cell(doc.dump());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("illegal kernel 7 at (0,1,4)"), std::string::npos) << e.what();
  }
}

TEST(Serialize, RejectsWrongShapeAndNonIntegers) {
  auto doc = cell_to_json(minimal_cell());
  auto bad = doc;
  bad["ops"].erase(3);
  EXPECT_THROW(parse_cell(bad.dump()), ShapeError);
  bad = doc;
  bad["ops"][2][0][5] = 2.5;
  try {
    parse_cell(bad.dump());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("(2,0,5)"), std::string::npos);
  }
  EXPECT_THROW(parse_cell("{not json"), ParseError);
}

TEST(Serialize, KeepsMeta) {
  nlohmann::json meta{{"origin", "test"}, {"score", 0.5}};
  nlohmann::json back;
  parse_cell(canonical_serialize(minimal_cell(), meta), {}, &back);
  EXPECT_EQ(back, meta);
}
