#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mstar/analysis.hpp"
#include "mstar/search/evaluator.hpp"
#include "support/ig_protocol.hpp"
#include "support/oracles.hpp"

using namespace mstar;

namespace {

constexpr int kConv = static_cast<int>(OpKind::Conv);
constexpr int kAvg = static_cast<int>(OpKind::AvgPool);
constexpr int kId = static_cast<int>(OpKind::Identity);

std::vector<double> cosine(std::size_t L, double f, double fs, double amp = 1.0) {
  std::vector<double> x(L);
  for (std::size_t n = 0; n < L; ++n) x[n] = amp * std::cos(2.0 * std::numbers::pi * f * static_cast<double>(n) / fs);
  return x;
}

SpaceConfig small_space() {
  SpaceConfig s;
  s.default_width = 6;
  s.bottleneck_width = 3;
  s.assign_default_widths();
  return s;
}

Array random_array(Shape s, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Array a(std::move(s));
  for (auto& v : a.storage()) v = standard_normal(rng);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// CWT

TEST(Cwt, ZeroSignalGivesZeroSpectrogram) {
  const auto s = cwt(std::vector<double>(256, 0.0), default_cwt_params(256));
  EXPECT_EQ(s.magnitude.size(), 64u * 256u);
  for (double v : s.magnitude) EXPECT_EQ(v, 0.0);
}

TEST(Cwt, CosinePeaksNearExpectedScale) {
  const std::size_t L = 1024;
  const double fs = 100.0;
  const auto p = default_cwt_params(L, fs);
  for (double f : {2.0, 5.0, 8.0, 12.0, 20.0}) {
    const auto s = cwt(cosine(L, f, fs), p);
    // time-averaged magnitude away from the edges
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t k = 0; k < p.scales.size(); ++k) {
      double m = 0.0;
      for (std::size_t t = L / 4; t < 3 * L / 4; ++t) m += s.at(k, t);
      if (m > best_v) {
        best_v = m;
        best = k;
      }
    }
    const double expected = p.omega0 * fs / (2.0 * std::numbers::pi * f);
    std::size_t nearest = 0;
    for (std::size_t k = 1; k < p.scales.size(); ++k)
      if (std::abs(std::log(p.scales[k] / expected)) < std::abs(std::log(p.scales[nearest] / expected))) nearest = k;
    EXPECT_LE(std::abs(static_cast<long>(best) - static_cast<long>(nearest)), 1) << "f = " << f;
  }
}

TEST(Cwt, ScalingScalesMagnitudes) {
  const auto x = cosine(200, 7.0, 64.0);
  std::vector<double> y = x;
  for (auto& v : y) v *= -2.5;
  const auto p = default_cwt_params(200);
  const auto a = cwt(x, p), b = cwt(y, p);
  for (std::size_t i = 0; i < a.magnitude.size(); ++i) EXPECT_NEAR(b.magnitude[i], 2.5 * a.magnitude[i], 1e-9);
}

TEST(Cwt, LinearOnComplexCoefficients) {
  Rng rng = make_rng(3);
  std::vector<double> x(150), y(150), z(150);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = standard_normal(rng);
    y[i] = standard_normal(rng);
  }
  const double alpha = 0.7, beta = -1.9;
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = alpha * x[i] + beta * y[i];
  const auto p = default_cwt_params(150);
  const auto cx = cwt_complex(x, p), cy = cwt_complex(y, p), cz = cwt_complex(z, p);
  const auto mz = cwt(z, p);
  for (std::size_t i = 0; i < cz.values.size(); ++i) {
    const auto expect = alpha * cx.values[i] + beta * cy.values[i];
    EXPECT_NEAR(std::abs(cz.values[i] - expect), 0.0, 1e-10);
    EXPECT_NEAR(mz.magnitude[i], std::abs(expect), 1e-10);
  }
}

TEST(Cwt, ShapeAndAxes) {
  const auto s = cwt(cosine(64, 3.0, 32.0), default_cwt_params(64, 32.0));
  EXPECT_EQ(s.scales.size(), 64u);
  EXPECT_DOUBLE_EQ(s.scales.front(), 2.0);
  EXPECT_DOUBLE_EQ(s.scales.back(), 32.0);
  for (double v : s.magnitude) EXPECT_GE(v, 0.0);
  const auto ax = s.axes();
  EXPECT_EQ(ax["length"], 64);
  EXPECT_EQ(ax["frequencies"].size(), 64u);
  // one CSV row per scale
  const auto csv = s.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 64);
}

TEST(Cwt, RejectsBadParameters) {
  CwtParams p;
  p.scales = {1.0, -2.0};
  EXPECT_THROW(cwt(std::vector<double>(10, 1.0), p), ConfigError);
  p.scales = {2.0, 1.0};
  EXPECT_THROW(cwt(std::vector<double>(10, 1.0), p), ConfigError);
  p.scales = {1.0};
  EXPECT_THROW(cwt(std::vector<double>(1, 1.0), p), ConfigError);
}

// ---------------------------------------------------------------------------
// Integrated Gradients

TEST(Ig, ExactOnLinearModel) {
  const Array w = random_array({3, 10}, 1);
  const Tensor wt = Tensor::constant(w);
  BatchModel f = [&](const Tensor& x) { return ops::linear(x, wt); };
  const Array x = random_array({2, 10}, 2);
  const auto ig = integrated_gradients(f, x, Array(x.shape(), 0.0), std::vector<std::size_t>{1, 2});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 10; ++i)
      EXPECT_NEAR(ig[b * 10 + i], w[(b + 1) * 10 + i] * x[b * 10 + i], 1e-12);
}

TEST(Ig, InputEqualToBaselineGivesZero) {
  SpaceConfig space = small_space();
  Rng rng = make_rng(9);
  NetworkSpec spec;
  spec.input_channels = 2;
  Network net = compile(random_cell(space, rng), space, spec);
  const Array x = random_array({1, 2, 16}, 3);
  const auto ig = integrated_gradients(network_model(net), x, x, 0);
  for (double v : ig.values()) EXPECT_EQ(v, 0.0);
}

TEST(Ig, RejectsBadArguments) {
  BatchModel f = [](const Tensor& x) { return x; };
  EXPECT_THROW(integrated_gradients(f, Array({2, 3}, 1.0), Array({2, 4}, 0.0), 0), ShapeError);
  IgOptions opt;
  opt.steps = 0;
  EXPECT_THROW(integrated_gradients(f, Array({2, 3}, 1.0), Array({2, 3}, 0.0), 0, opt), ConfigError);
}

TEST(Ig, CompletenessOnRandomNetworks) {
  const auto suite = protocol::ig_completeness_suite();
  int improved = 0;
  for (std::size_t s = 0; s < suite.size(); ++s) {
    EXPECT_LE(suite[s].e256, 0.01) << "net " << s;
    if (suite[s].e256 < suite[s].e64 || suite[s].exact()) ++improved;
  }
  EXPECT_GE(improved, 9);
}

TEST(Ig, LeavesParameterGradientsClear) {
  SpaceConfig space = small_space();
  Rng rng = make_rng(5);
  NetworkSpec spec;
  spec.input_channels = 1;
  Network net = compile(random_cell(space, rng), space, spec);
  node_attribution(net, random_array({2, 1, 12}, 4), 11, std::nullopt);
  for (const auto& t : net.store().tensors())
    for (double g : t.grad().values()) EXPECT_EQ(g, 0.0);
}

// ---------------------------------------------------------------------------
// Node attribution

TEST(NodeAttribution, DisconnectedNodeScoresZero) {
  CellMatrix m;
  m.at(kConv, 0, 1) = 3;
  m.at(kConv, 1, 7) = 3;
  m.at(kId, 7, 12) = 1;
  SpaceConfig space = small_space();
  NetworkSpec spec;
  spec.input_channels = 1;
  Network net = compile(m, space, spec);
  const auto e = node_attribution(net, random_array({3, 1, 20}, 1), 9, std::vector<int>{0, 1, 0});
  EXPECT_EQ(e.score, 0.0);
  for (const auto& [k, v] : e.per_class) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(node_attribution(net, random_array({1, 1, 20}, 1), 12, std::nullopt), ConfigError);
}

TEST(NodeAttribution, DuplicatedNodesScoreEqually) {
  // Nodes 9 and 10 are identity copies of node 1 and feed the output the same way.
  CellMatrix m;
  m.at(kConv, 0, 1) = 5;
  m.at(kId, 1, 9) = 1;
  m.at(kId, 1, 10) = 1;
  m.at(kId, 9, 12) = 1;
  m.at(kId, 10, 12) = 1;
  SpaceConfig space = small_space();
  NetworkSpec spec;
  spec.input_channels = 2;
  spec.output_width = 3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spec.seed = seed;
    Network net = compile(m, space, spec);
    const Array x = random_array({4, 2, 18}, seed + 10);
    const auto a = node_attribution(net, x, 9, std::nullopt, 1);
    const auto b = node_attribution(net, x, 10, std::nullopt, 1);
    EXPECT_GT(a.score, 0.0);
    EXPECT_NEAR(a.score, b.score, 1e-9);
  }
}

TEST(NodeAttribution, SiblingsAreReachableSameLayerNodes) {
  CellMatrix m;
  m.at(kConv, 0, 1) = 3;
  m.at(kConv, 1, 7) = 3;
  m.at(kConv, 1, 9) = 1;
  m.at(kId, 7, 12) = 1;
  m.at(kId, 9, 12) = 1;
  const auto g = preprocess(m, small_space());
  EXPECT_EQ(sibling_nodes(g, 7), (std::vector<int>{9}));
  EXPECT_EQ(sibling_nodes(g, 10), (std::vector<int>{7, 9}));
}

TEST(NodeAttribution, HighFrequencyEvidenceFavoursSmallReceptiveField) {
  // Node 7 sees 3 samples. Node 11 sits behind a 9-wide average pool applied
  // straight to the input, which removes near-Nyquist content before any
  // nonlinearity, and a 39-wide convolution. Class 1 differs from class 0 only
  // by a burst near the Nyquist rate. Scores are pooled over five seeds.
  CellMatrix m;
  m.at(kConv, 0, 1) = 3;
  m.at(kConv, 1, 2) = 1;
  m.at(kConv, 2, 7) = 1;
  m.at(kAvg, 0, 6) = 9;
  m.at(kConv, 6, 11) = 39;
  m.at(kId, 7, 12) = 1;
  m.at(kId, 11, 12) = 1;
  SpaceConfig space;
  space.default_width = 8;
  space.bottleneck_width = 4;
  space.assign_default_widths();
  const auto rf = receptive_fields(preprocess(m, space));
  ASSERT_EQ(rf[7], (RfSet{3}));
  ASSERT_EQ(*rf[11].rbegin(), 47);

  std::vector<double> small, large;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GeneratorSpec gs;
    gs.length = 96;
    gs.samples_per_class = 150;
    gs.noise_std = 0.3;
    gs.seed = 4 + seed;
    Burst low;
    low.freq_lo = 0.02;
    low.freq_hi = 0.05;
    Burst high;
    high.freq_lo = 0.42;
    high.freq_hi = 0.47;
    high.start = 0.3;
    high.end = 0.6;
    high.jitter = 0.2;
    gs.bursts = {{low}, {low, high}};
    const Dataset data = generate(gs);

    NetworkSpec spec;
    spec.input_channels = 1;
    spec.seed = seed;
    Network net = compile(m, space, spec);
    TrainConfig tc;
    tc.epochs = 15;
    tc.lr = 1e-2;
    tc.weight_decay = 0.05;
    tc.seed = seed;
    train_network(net, data, tc);
    ASSERT_GT(evaluate_accuracy(net, data, Split::Test), 0.9);

    const auto idx = data.indices(Split::Test);
    const auto x = data.batch_inputs(idx);
    const auto labels = data.batch_labels(idx);
    small.push_back(node_attribution(net, x, 7, labels, 0, {64, 16}).per_class.at(1));
    large.push_back(node_attribution(net, x, 11, labels, 0, {64, 16}).per_class.at(1));
  }
  EXPECT_GT(mean_of(small), mean_of(large));
}

TEST(NodeAttribution, CsvHasOneRowPerNode) {
  std::vector<AttributionEntry> es(2);
  es[0].node = 7;
  es[0].score = 1.5;
  es[0].per_class = {{0, 1.0}, {1, 2.0}};
  es[1].node = 9;
  const auto csv = attribution_csv(es);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "node,score,class_0,class_1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

// ---------------------------------------------------------------------------
// Ablation and the multi-scale experiment

namespace {

// Evaluator that returns a fixed score per cell hash plus seed noise.
class CountingEvaluator : public Evaluator {
 public:
  double evaluate(const CellMatrix& m, std::uint64_t seed) const override {
    int edges = 0;
    for (const auto& [i, j] : legal_slots()) edges += m.has_edge(i, j);
    return edges + 0.01 * static_cast<double>(seed);
  }
  std::string id() const override { return "counting"; }
  nlohmann::json describe() const override { return {{"id", id()}}; }
  bool higher_is_better() const override { return true; }
};

CellMatrix last_layer_cell() {
  CellMatrix m;
  m.at(kConv, 0, 1) = 3;
  for (int n = 7; n <= 11; ++n) {
    m.at(kConv, 1, n) = 3;
    m.at(kId, n, 12) = 1;
  }
  return m;
}

}  // namespace

TEST(Ablation, ReportShapeAndStats) {
  CountingEvaluator ev;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto r = ablate_nodes(last_layer_cell(), default_ablation_sets(), ev, seeds, small_space());
  ASSERT_EQ(r.rows.size(), 7u);
  EXPECT_TRUE(r.rows[0].removed.empty());
  EXPECT_NEAR(r.rows[0].mean, 11.02, 1e-12);
  EXPECT_NEAR(r.rows[0].std, 0.01 * std::sqrt(2.5), 1e-12);
  EXPECT_EQ(r.rows[5].removed, (std::vector<int>{9, 10}));
  EXPECT_NEAR(r.rows[5].mean, 7.02, 1e-12);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.valid);
    EXPECT_EQ(row.metrics.size(), 5u);
  }
  const auto csv = ablation_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "removed,valid,mean,std,seed_0,seed_1,seed_2,seed_3,seed_4");
  EXPECT_NE(csv.find("N9+N10,1,"), std::string::npos);
}

TEST(Ablation, UnreachableOutputIsReportedInvalid) {
  // The input's only outgoing edges lead into the last hidden layer.
  CellMatrix m;
  m.at(kConv, 0, 7) = 3;
  m.at(kConv, 0, 8) = 1;
  m.at(kId, 7, 12) = 1;
  m.at(kId, 8, 12) = 1;
  CountingEvaluator ev;
  const auto r = ablate_nodes(m, {{7}, {7, 8}}, ev, {0, 1}, small_space());
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_TRUE(r.rows[1].valid);
  EXPECT_FALSE(r.rows[2].valid);
  EXPECT_NE(r.rows[2].reason.find("output-unreachable"), std::string::npos);
  EXPECT_TRUE(r.rows[2].metrics.empty());
  EXPECT_NE(ablation_csv(r).find("N7+N8,0,"), std::string::npos);
}

TEST(Ablation, OnlyLastHiddenLayerNodes) {
  CountingEvaluator ev;
  EXPECT_THROW(ablate_nodes(last_layer_cell(), {{6}}, ev, {0}, small_space()), ConfigError);
  EXPECT_THROW(ablate_nodes(last_layer_cell(), {{12}}, ev, {0}, small_space()), ConfigError);
  EXPECT_THROW(ablate_nodes(last_layer_cell(), {{7}}, ev, {}, small_space()), ConfigError);
}

TEST(Ablation, RemoveNodesClearsRowsAndColumns) {
  const auto cut = remove_nodes(last_layer_cell(), {8});
  for (int k = 0; k < kNumNodes; ++k) {
    if (k < 8) {
      EXPECT_FALSE(cut.has_edge(k, 8));
    }
    if (k > 8) {
      EXPECT_FALSE(cut.has_edge(8, k));
    }
  }
  EXPECT_TRUE(cut.has_edge(1, 9));
}

TEST(Multiscale, ReportHasSixRows) {
  GeneratorSpec gs;
  gs.length = 32;
  gs.samples_per_class = 20;
  Burst a, b;
  a.freq_lo = a.freq_hi = 0.1;
  b.freq_lo = b.freq_hi = 0.3;
  gs.bursts = {{a}, {b}};
  const Dataset data = generate(gs);
  MultiscaleConfig cfg;
  cfg.model.base_width = 4;
  cfg.model.layers = 1;
  cfg.train.epochs = 1;
  cfg.seeds = {0, 1};
  const auto rows = multiscale_experiment(data, cfg);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(motivation_name(rows.front().kind), "M_all");
  EXPECT_EQ(motivation_name(rows.back().kind), "M_60");
  for (const auto& r : rows) {
    EXPECT_EQ(r.metrics.size(), 2u);
    EXPECT_GE(r.mean, 0.0);
    EXPECT_LE(r.mean, 1.0);
  }
  const auto csv = multiscale_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

// ---------------------------------------------------------------------------
// Statistics

TEST(Wilcoxon, MatchesEnumerationOracle) {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> a(10), b(10), d(10);
    for (int i = 0; i < 10; ++i) {
      // rounding creates ties and zero differences
      a[i] = std::round(4.0 * standard_normal(rng)) / 4.0 + 0.3;
      b[i] = std::round(4.0 * standard_normal(rng)) / 4.0;
      d[i] = a[i] - b[i];
    }
    EXPECT_NEAR(wilcoxon_signed_rank(a, b).p_greater, oracle::wilcoxon_signed_rank_greater(d), 1e-12);
  }
}

TEST(Wilcoxon, KnownValues) {
  // all ten differences positive: p = 2^-10
  std::vector<double> a(10), b(10, 0.0);
  for (int i = 0; i < 10; ++i) a[i] = i + 1;
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.n, 10u);
  EXPECT_DOUBLE_EQ(r.w_plus, 55.0);
  EXPECT_DOUBLE_EQ(r.p_greater, 1.0 / 1024.0);
  EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(b, b).p_greater, 1.0);
}

TEST(Stats, MeanAndSampleStd) {
  EXPECT_DOUBLE_EQ(mean_of({1, 2, 3, 4}), 2.5);
  EXPECT_NEAR(sample_std({1, 2, 3, 4}), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(sample_std({7}), 0.0);
}
