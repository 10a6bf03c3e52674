// mstar: command-line frontend.
//
// Every subcommand accepts --seed, --config <json>, --out <dir>, --dry-run and
// --jobs. Values are resolved as defaults < config file < flags. A manifest
// (manifest.json in --out) is written when the command finishes, whether it
// succeeded or failed; --dry-run prints the resolved config and writes nothing.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mstar.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mstar;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out = "out";
  bool dry_run = false;
  std::size_t jobs = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Base seed");
  app->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_flag("--dry-run", c.dry_run, "Print the resolved config and exit");
  app->add_option("--jobs", c.jobs, "Worker threads for parallel-safe work")->check(CLI::Range(1, 256));
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Collects what a run read and wrote; serialised as the manifest.
class Run {
 public:
  Run(std::string command, const Common& common, std::vector<std::string> argv)
      : command_(std::move(command)), common_(common), argv_(std::move(argv)),
        start_(std::chrono::steady_clock::now()) {}

  json config = json::object();
  std::vector<std::uint64_t> seeds;

  std::uint64_t seed() const { return common_.seed.value_or(0); }
  const Common& common() const { return common_; }

  void input(const std::string& path) {
    inputs_.push_back({{"path", path}, {"hash", hex64(fnv1a(read_file(path)))}});
  }

  std::string path(const std::string& name) const { return (fs::path(common_.out) / name).string(); }

  void write(const std::string& name, const std::string& content) {
    fs::create_directories(common_.out);
    const auto p = path(name);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write " + p);
    os << content;
    if (!os) throw Error("write failed for " + p);
    os.close();
    record(name, content);
  }

  // For files written by library code.
  void record_file(const std::string& name) { record(name, read_file(path(name))); }

  void finish(int code, const std::string& error = {}) {
    if (common_.dry_run) return;
    json m;
    m["command"] = command_;
    m["argv"] = argv_;
    m["config"] = config;
    m["seeds"] = seeds;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["status"] = code == 0 ? "ok" : "error";
    m["exit_code"] = code;
    if (!error.empty()) m["error"] = error;
    m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    try {
      fs::create_directories(common_.out);
      std::ofstream os(path("manifest.json"));
      os << m.dump(2) << '\n';
    } catch (const std::exception& e) {
      std::cerr << "warning: manifest not written: " << e.what() << '\n';
    }
  }

 private:
  void record(const std::string& name, const std::string& content) {
    outputs_.push_back({{"path", path(name)}, {"hash", hex64(fnv1a(content))}});
  }

  std::string command_;
  Common common_;
  std::vector<std::string> argv_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

json load_config(const Common& c) {
  if (c.config_path.empty()) return json::object();
  try {
    auto j = json::parse(read_file(c.config_path));
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError("config file is not valid JSON: " + std::string(e.what()));
  }
}

json section(const json& cfg, const char* key) { return cfg.contains(key) ? cfg.at(key) : json::object(); }

CellMatrix load_cell(Run& run, const std::string& path, const SpaceConfig& space) {
  run.input(path);
  return parse_cell(read_file(path), space);
}

Dataset load_dataset(Run& run, const std::string& path) {
  run.input(path);
  return load_binary(path);
}

std::string rf_string(const RfSet& s) {
  std::string out = "{";
  bool first = true;
  for (int r : s) {
    out += (first ? "" : ", ") + std::to_string(r);
    first = false;
  }
  return out + "}";
}

std::vector<std::uint64_t> seed_range(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(base + i);
  return s;
}

Logger stderr_logger() {
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

// ---------------------------------------------------------------------------
// Surrogate and evaluator helpers shared by several commands

struct CaeSetup {
  std::size_t width = 32;
  std::size_t corpus = 2000;
  AutoencoderTrainConfig train{.epochs = 10, .batch_size = 64, .lr = 1e-2, .test_fraction = 0.1, .seed = 0};
};

CaeSetup cae_setup_from_json(const json& j, std::uint64_t seed) {
  CaeSetup s;
  s.width = j.value("width", s.width);
  s.corpus = j.value("corpus", s.corpus);
  s.train = ae_config_from_json(section(j, "train"), s.train);
  if (!j.contains("train") || !j["train"].contains("seed")) s.train.seed = seed;
  if (s.width == 0 || s.corpus < 2) throw UsageError("cae config: width must be positive and corpus >= 2");
  return s;
}

json cae_setup_to_json(const CaeSetup& s) {
  return {{"width", s.width}, {"corpus", s.corpus}, {"train", ae_config_to_json(s.train)}};
}

std::vector<CellMatrix> random_corpus(std::size_t n, const SpaceConfig& space, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x636f7270);
  std::vector<CellMatrix> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_cell(space, rng));
  return out;
}

// Loads a CAE checkpoint when a path is given, otherwise pretrains one.
CaeModel obtain_cae(Run& run, const std::string& path, const CaeSetup& setup, const SpaceConfig& space) {
  if (!path.empty()) {
    run.input(path);
    return load_cae(path);
  }
  std::cerr << "pretraining CAE (width " << setup.width << ", " << setup.corpus << " cells, " << setup.train.epochs
            << " epochs)\n";
  auto t = train_cae(random_corpus(setup.corpus, space, setup.train.seed), setup.width, setup.train);
  return std::move(t.model);
}

std::unique_ptr<Evaluator> make_evaluator(Run& run, const std::string& kind, const std::string& data_path,
                                          const json& cfg, const SpaceConfig& space) {
  if (kind == "synthetic") {
    auto b = std::make_unique<SyntheticBenchmark>(synthetic_from_json(section(cfg, "synthetic")));
    b->space = space;
    return b;
  }
  if (kind == "trainer") {
    if (data_path.empty()) throw UsageError("--evaluator trainer needs --data <dataset.msts>");
    auto data = std::make_shared<const Dataset>(load_dataset(run, data_path));
    const NetworkSpec spec = spec_from_json(section(cfg, "network"));
    const TrainConfig train = train_config_from_json(section(cfg, "train"));
    return std::make_unique<TrainerEvaluator>(data, spec, train, space);
  }
  throw UsageError("--evaluator must be synthetic or trainer");
}

// ---------------------------------------------------------------------------
// Commands. Each resolves run.config first, returns early on --dry-run.

struct Args {
  std::string cell, cell2, data, schema, cae, evaluator = "synthetic", nodes;
  std::size_t count = 1, index = 0, channel = 0, seeds = 5, cells_stacked = 1;
  double fraction = 0.15;
  std::string data_sub, analyze_sub, bench_sub;
};

bool dry(Run& run) {
  if (!run.common().dry_run) return false;
  std::cout << run.config.dump(2) << '\n';
  return true;
}

int cmd_gen(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  run.config = {{"space", space_config_to_json(space)}, {"count", a.count}, {"seed", run.seed()}};
  run.seeds = {run.seed()};
  if (dry(run)) return 0;
  Rng rng = make_rng(run.seed(), 0x67656e);
  for (std::size_t i = 0; i < a.count; ++i) {
    const CellMatrix m = random_cell(space, rng);
    char name[32];
    std::snprintf(name, sizeof name, "cell_%04zu.json", i);
    run.write(name, canonical_serialize(m, {{"seed", run.seed()}, {"index", i}}));
    std::cout << name << " " << hex64(m.hash()) << " edges " << preprocess(m, space).edges.size() << '\n';
  }
  return 0;
}

int cmd_validate(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  run.config = {{"space", space_config_to_json(space)}, {"cell", a.cell}};
  if (dry(run)) return 0;
  const CellMatrix m = load_cell(run, a.cell, space);
  const auto report = validate(m, space);
  json r = {{"valid", report.valid}, {"violations", json::array()}};
  for (const auto& v : report.violations)
    r["violations"].push_back({{"rule", v.rule}, {"channel", v.channel}, {"src", v.src}, {"dst", v.dst},
                               {"node", v.node}, {"message", v.message}});
  run.write("validation.json", r.dump(2) + "\n");
  std::cout << report.summary() << (report.valid ? "\n" : "");
  return report.valid ? 0 : 2;
}

int cmd_mutate(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  const double fraction = section(cfg, "search").value("mutation_fraction", a.fraction);
  run.config = {{"space", space_config_to_json(space)}, {"fraction", fraction}, {"cell", a.cell}};
  run.seeds = {run.seed()};
  if (dry(run)) return 0;
  const CellMatrix m = load_cell(run, a.cell, space);
  Rng rng = make_rng(run.seed(), 0x6d7574);
  MutationTrace trace;
  const CellMatrix out = mutate(m, fraction, space, rng, &trace);
  run.write("mutated.json", canonical_serialize(out, {{"parent", hex64(m.hash())}, {"seed", run.seed()}}));
  std::cout << "resampled " << trace.resampled.size() << " slots, " << slot_difference(m, out) << " differ"
            << (trace.repaired ? ", repaired" : "") << '\n';
  return 0;
}

int cmd_rf(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  run.config = {{"space", space_config_to_json(space)}, {"cells_stacked", a.cells_stacked}, {"cell", a.cell}};
  if (dry(run)) return 0;
  const CellMatrix m = load_cell(run, a.cell, space);
  const auto g = preprocess(m, space);
  const auto per_cell = receptive_fields_per_cell(g, static_cast<int>(a.cells_stacked));
  json doc = json::array();
  for (std::size_t c = 0; c < per_cell.size(); ++c) {
    json cell = json::object();
    for (int n = 0; n < kNumNodes; ++n) {
      const auto& rf = per_cell[c][static_cast<std::size_t>(n)];
      if (!g.nodes[static_cast<std::size_t>(n)].reachable) continue;
      cell[std::to_string(n)] = std::vector<int>(rf.begin(), rf.end());
      std::cout << "cell " << c << " node " << n << " (layer " << layer_of(n) << "): " << rf_string(rf) << '\n';
    }
    doc.push_back(cell);
  }
  run.write("rf.json", doc.dump(2) + "\n");
  return 0;
}

int cmd_compile(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  const NetworkSpec spec = spec_from_json(section(cfg, "network"));
  run.config = {{"space", space_config_to_json(space)}, {"network", spec_to_json(spec)}, {"cell", a.cell}};
  if (dry(run)) return 0;
  const CellMatrix m = load_cell(run, a.cell, space);
  NetworkSpec s = spec;
  s.seed = run.seed();
  const Network net = compile(m, space, s);
  const json d = network_description(net);
  run.write("network.json", d.dump(2) + "\n");
  std::cout << "parameters " << count_parameters(net) << ", cells " << net.cells().size() << ", edges "
            << net.graph().edges.size() << ", store " << hex64(net.store().hash()) << '\n';
  return 0;
}

int cmd_data(Run& run, const Args& a, const json& cfg) {
  if (a.data_sub == "gen") {
    GeneratorSpec gs = generator_from_json(section(cfg, "generator"));
    if (run.common().seed) gs.seed = *run.common().seed;
    run.config = {{"generator", generator_to_json(gs)}};
    run.seeds = {gs.seed};
    if (dry(run)) return 0;
    const Dataset d = generate(gs);
    fs::create_directories(run.common().out);
    save_binary(d, run.path("dataset.msts"));
    run.record_file("dataset.msts");
    std::cout << "samples " << d.n << ", channels " << d.channels << ", length " << d.length << ", hash "
              << hex64(d.hash()) << '\n';
    return 0;
  }
  // convert
  if (a.schema.empty()) throw UsageError("data convert needs --schema <schema.json>");
  json schema_doc;
  try {
    schema_doc = json::parse(read_file(a.schema));
  } catch (const json::parse_error& e) {
    throw UsageError("schema is not valid JSON: " + std::string(e.what()));
  }
  const CsvSchema schema = csv_schema_from_json(schema_doc);
  run.config = {{"schema", schema_doc}, {"csv", a.data}};
  if (dry(run)) return 0;
  run.input(a.schema);
  run.input(a.data);
  const Dataset d = load_csv(a.data, schema);
  fs::create_directories(run.common().out);
  save_binary(d, run.path("dataset.msts"));
  run.record_file("dataset.msts");
  std::cout << "samples " << d.n << ", channels " << d.channels << ", length " << d.length << ", hash "
            << hex64(d.hash()) << '\n';
  return 0;
}

int cmd_pretrain_cae(Run& run, const Args&, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  const CaeSetup setup = cae_setup_from_json(section(cfg, "cae"), run.seed());
  run.config = {{"space", space_config_to_json(space)}, {"cae", cae_setup_to_json(setup)}};
  run.seeds = {setup.train.seed};
  if (dry(run)) return 0;
  const auto t = train_cae(random_corpus(setup.corpus, space, setup.train.seed), setup.width, setup.train);
  fs::create_directories(run.common().out);
  save_cae(t.model, run.path("cae.bin"));
  run.record_file("cae.bin");
  run.write("cae_loss.csv", loss_history_csv(t.history));
  std::cout << "test L2 " << t.history.front().test << " -> " << t.history.back().test << '\n';
  return 0;
}

int cmd_pretrain_vae(Run& run, const Args&, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  const json vj = section(cfg, "vae");
  VaeConfig vc;
  vc.hidden = vj.value("hidden", vc.hidden);
  vc.layers = vj.value("layers", vc.layers);
  vc.latent = vj.value("latent", vc.latent);
  vc.decoder_dim = vj.value("decoder_dim", vc.decoder_dim);
  vc.kl_weight = vj.value("kl_weight", vc.kl_weight);
  if (vc.hidden == 0 || vc.hidden % 4 != 0) throw UsageError("vae config: hidden must be a positive multiple of 4");
  std::size_t corpus = vj.value("corpus", std::size_t{2000});
  AutoencoderTrainConfig tc{.epochs = 10, .batch_size = 64, .lr = 1e-2, .test_fraction = 0.1, .seed = run.seed()};
  tc = ae_config_from_json(section(vj, "train"), tc);
  if (run.common().seed) tc.seed = *run.common().seed;
  run.config = {{"space", space_config_to_json(space)},
                {"vae",
                 {{"hidden", vc.hidden},
                  {"layers", vc.layers},
                  {"latent", vc.latent},
                  {"decoder_dim", vc.decoder_dim},
                  {"kl_weight", vc.kl_weight},
                  {"corpus", corpus},
                  {"train", ae_config_to_json(tc)}}}};
  run.seeds = {tc.seed};
  if (dry(run)) return 0;
  const auto t = train_vae(random_corpus(corpus, space, tc.seed), vc, tc);
  fs::create_directories(run.common().out);
  save_parameters(t.model.store(), run.path("vae.bin"));
  run.record_file("vae.bin");
  run.write("vae_loss.csv", loss_history_csv(t.history));
  std::cout << "test L2 " << t.history.front().test << " -> " << t.history.back().test << '\n';
  return 0;
}

int cmd_search(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  SearchConfig sc = search_config_from_json(section(cfg, "search"));
  if (run.common().seed) sc.seed = *run.common().seed;
  sc.check();
  const CaeSetup setup = cae_setup_from_json(section(cfg, "cae"), sc.seed);
  run.config = {{"space", space_config_to_json(space)},
                {"search", search_config_to_json(sc)},
                {"evaluator", a.evaluator},
                {"cae", a.cae.empty() ? cae_setup_to_json(setup) : json{{"path", a.cae}}},
                {"data", a.data},
                {"jobs", run.common().jobs}};
  for (const char* k : {"synthetic", "network", "train"})
    if (cfg.contains(k)) run.config[k] = cfg[k];
  run.seeds = {sc.seed};
  if (dry(run)) return 0;
  const auto ev = make_evaluator(run, a.evaluator, a.data, cfg, space);
  const CaeModel cae = obtain_cae(run, a.cae, setup, space);
  SearchOptions opt{.jobs = run.common().jobs, .log = stderr_logger()};
  SearchResult r;
  int code = 0;
  std::string error;
  try {
    r = search_loop(sc, *ev, cae, space, opt);
  } catch (const SearchAborted& e) {
    r = e.partial();
    code = 2;
    error = e.what();
  }
  run.write("population.json", population_to_json(r.population).dump(2) + "\n");
  run.write("history.csv", history_csv(r.history));
  std::cout << "population " << r.population.size() << ", iterations " << r.iterations_completed << ", best "
            << r.population.best_label() << ", hash " << hex64(r.population.hash()) << '\n';
  if (code) throw Error(error);
  return 0;
}

int cmd_analyze(Run& run, const Args& a, const json& cfg) {
  if (a.analyze_sub == "cwt") {
    const json cj = section(cfg, "cwt");
    const double fs_hz = cj.value("fs", 1.0);
    const double omega0 = cj.value("omega0", 6.0);
    run.config = {{"cwt", {{"fs", fs_hz}, {"omega0", omega0}}}, {"data", a.data}, {"index", a.index},
                  {"channel", a.channel}};
    if (dry(run)) return 0;
    const Dataset d = load_dataset(run, a.data);
    if (a.index >= d.n || a.channel >= d.channels) throw UsageError("--index or --channel out of range");
    const auto* x = d.inputs.data() + a.index * d.sample_size() + a.channel * d.length;
    CwtParams p = default_cwt_params(d.length, fs_hz);
    p.omega0 = omega0;
    const auto s = cwt(std::vector<double>(x, x + d.length), p);
    run.write("cwt.csv", s.to_csv());
    run.write("cwt_axes.json", s.axes().dump(2) + "\n");
    std::cout << "spectrogram " << s.scales.size() << " x " << s.length << '\n';
    return 0;
  }

  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  if (a.analyze_sub == "ig") {
    NetworkSpec spec = spec_from_json(section(cfg, "network"));
    TrainConfig tc = train_config_from_json(section(cfg, "train"));
    IgOptions opt;
    opt.steps = section(cfg, "ig").value("steps", opt.steps);
    if (opt.steps < 1) throw UsageError("ig steps must be >= 1");
    std::vector<int> nodes;
    if (!a.nodes.empty()) {
      std::stringstream ss(a.nodes);
      for (std::string tok; std::getline(ss, tok, ',');) nodes.push_back(std::stoi(tok));
    }
    run.config = {{"space", space_config_to_json(space)}, {"network", spec_to_json(spec)},
                  {"train", train_config_to_json(tc)}, {"ig", {{"steps", opt.steps}}}, {"cell", a.cell},
                  {"data", a.data}, {"nodes", nodes}};
    run.seeds = {run.seed()};
    if (dry(run)) return 0;
    const CellMatrix m = load_cell(run, a.cell, space);
    const Dataset d = load_dataset(run, a.data);
    if (d.label_kind != LabelKind::Integer) throw Error("analyze ig: dataset needs class labels");
    SpaceConfig sp = space;
    sp.node_widths[kInputNode] = static_cast<int>(d.channels);
    spec.input_channels = static_cast<int>(d.channels);
    spec.input_length = d.length;
    spec.output_width = d.num_classes();
    spec.seed = run.seed();
    tc.seed = run.seed();
    Network net = compile(m, sp, spec);
    train_network(net, d, tc);
    const auto g = net.graph();
    if (nodes.empty())
      for (int n = 7; n < kOutputNode; ++n)
        if (g.nodes[static_cast<std::size_t>(n)].reachable) nodes.push_back(n);
    const auto idx = d.indices(Split::Test);
    if (idx.empty()) throw Error("analyze ig: dataset has no test split");
    const auto x = d.batch_inputs(idx);
    const auto labels = d.batch_labels(idx);
    std::vector<AttributionEntry> entries;
    for (int n : nodes) {
      entries.push_back(node_attribution(net, x, n, labels, 0, opt));
      std::cout << "node " << n << " score " << entries.back().score << '\n';
    }
    run.write("attribution.csv", attribution_csv(entries));
    run.write("attribution_axes.json",
              json{{"rows", "node"}, {"cols", "score, then per-class score"}, {"samples", idx.size()},
                   {"test_accuracy", evaluate_accuracy(net, d, Split::Test)}}
                      .dump(2) + "\n");
    return 0;
  }

  // ablate
  std::vector<std::vector<int>> sets = default_ablation_sets();
  if (cfg.contains("ablation") && cfg["ablation"].contains("sets"))
    sets = cfg["ablation"]["sets"].get<std::vector<std::vector<int>>>();
  const auto seeds = seed_range(run.seed(), a.seeds);
  run.config = {{"space", space_config_to_json(space)}, {"evaluator", a.evaluator}, {"sets", sets},
                {"cell", a.cell}, {"data", a.data}};
  for (const char* k : {"synthetic", "network", "train"})
    if (cfg.contains(k)) run.config[k] = cfg[k];
  run.seeds = seeds;
  if (dry(run)) return 0;
  const CellMatrix m = load_cell(run, a.cell, space);
  const auto ev = make_evaluator(run, a.evaluator, a.data, cfg, space);
  const auto r = ablate_nodes(m, sets, *ev, seeds, space);
  run.write("ablation.csv", ablation_csv(r));
  for (const auto& row : r.rows)
    std::cout << node_set_name(row.removed) << ": "
              << (row.valid ? std::to_string(row.mean) + " +- " + std::to_string(row.std) : "invalid") << '\n';
  return 0;
}

int cmd_bench(Run& run, const Args& a, const json& cfg) {
  const json mj = section(cfg, "multiscale");
  MultiscaleConfig mc;
  mc.model = motivation_config_from_json(section(mj, "model"));
  mc.train = train_config_from_json(section(mj, "train"));
  mc.seeds = seed_range(run.seed(), a.seeds);
  run.config = {{"multiscale",
                 {{"model", motivation_config_to_json(mc.model)}, {"train", train_config_to_json(mc.train)}}},
                {"data", a.data}};
  run.seeds = mc.seeds;
  if (dry(run)) return 0;
  const Dataset d = load_dataset(run, a.data);
  const auto rows = multiscale_experiment(d, mc, stderr_logger());
  run.write("multiscale.csv", multiscale_csv(rows));
  for (const auto& r : rows)
    std::cout << motivation_name(r.kind) << " width " << r.width << " accuracy " << r.mean << " +- " << r.std << '\n';
  return 0;
}

int cmd_eval_predictors(Run& run, const Args& a, const json& cfg) {
  const SpaceConfig space = space_config_from_json(section(cfg, "space"));
  const PredictorEvalConfig pc = predictor_eval_from_json(section(cfg, "predictors"));
  const CaeSetup setup = cae_setup_from_json(section(cfg, "cae"), run.seed());
  const auto seeds = seed_range(run.seed(), a.seeds);
  run.config = {{"space", space_config_to_json(space)},
                {"predictors", predictor_eval_to_json(pc)},
                {"evaluator", a.evaluator},
                {"cae", a.cae.empty() ? cae_setup_to_json(setup) : json{{"path", a.cae}}},
                {"data", a.data}};
  for (const char* k : {"synthetic", "network", "train"})
    if (cfg.contains(k)) run.config[k] = cfg[k];
  run.seeds = seeds;
  if (dry(run)) return 0;
  const auto ev = make_evaluator(run, a.evaluator, a.data, cfg, space);
  const CaeModel cae = obtain_cae(run, a.cae, setup, space);
  std::vector<PredictorEvalResult> rs;
  for (auto s : seeds) rs.push_back(evaluate_predictors(cae, *ev, space, pc, s, stderr_logger()));
  run.write("predictors.csv", predictor_eval_csv(rs));
  double e = 0.0, c = 0.0;
  for (const auto& r : rs) {
    e += r.ensemble_spearman / static_cast<double>(rs.size());
    c += r.conv_spearman / static_cast<double>(rs.size());
  }
  std::cout << "mean spearman: cae+linear " << e << ", conv " << c << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale cell search, surrogates and analysis"};
  app.require_subcommand(1);
  Common common;
  Args a;

  auto* gen = app.add_subcommand("gen", "Sample random cells");
  gen->add_option("--count", a.count, "Number of cells")->check(CLI::PositiveNumber);
  add_common(gen, common);

  auto* val = app.add_subcommand("validate", "Validate a cell document");
  val->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  add_common(val, common);

  auto* mut = app.add_subcommand("mutate", "Mutate a cell");
  mut->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  mut->add_option("--fraction", a.fraction, "Share of legal slots redrawn")->check(CLI::Range(0.0, 1.0));
  add_common(mut, common);

  auto* rf = app.add_subcommand("rf", "Receptive-field report");
  rf->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  rf->add_option("--cells-stacked", a.cells_stacked)->check(CLI::PositiveNumber);
  add_common(rf, common);

  auto* cmp = app.add_subcommand("compile", "Compile a cell into a network");
  cmp->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  add_common(cmp, common);

  auto* data = app.add_subcommand("data", "Dataset generation and conversion");
  data->require_subcommand(1);
  auto* data_gen = data->add_subcommand("gen", "Generate a synthetic dataset");
  add_common(data_gen, common);
  auto* data_conv = data->add_subcommand("convert", "Convert a CSV file to the binary format");
  data_conv->add_option("csv", a.data)->required()->check(CLI::ExistingFile);
  data_conv->add_option("--schema", a.schema)->required()->check(CLI::ExistingFile);
  add_common(data_conv, common);

  auto* pcae = app.add_subcommand("pretrain-cae", "Pretrain the convolutional autoencoder");
  add_common(pcae, common);
  auto* pvae = app.add_subcommand("pretrain-vae", "Pretrain the variational autoencoder");
  add_common(pvae, common);

  auto* search = app.add_subcommand("search", "Run the surrogate-guided search");
  search->add_option("--evaluator", a.evaluator)->check(CLI::IsMember({"synthetic", "trainer"}));
  search->add_option("--cae", a.cae, "CAE checkpoint (pretrained from config when absent)")->check(CLI::ExistingFile);
  search->add_option("--data", a.data, "Dataset for the trainer evaluator")->check(CLI::ExistingFile);
  add_common(search, common);

  auto* analyze = app.add_subcommand("analyze", "Spectrograms, attributions, ablations");
  analyze->require_subcommand(1);
  auto* an_cwt = analyze->add_subcommand("cwt", "Wavelet spectrogram of one dataset channel");
  an_cwt->add_option("data", a.data)->required()->check(CLI::ExistingFile);
  an_cwt->add_option("--index", a.index);
  an_cwt->add_option("--channel", a.channel);
  add_common(an_cwt, common);
  auto* an_ig = analyze->add_subcommand("ig", "Node attributions of a trained cell");
  an_ig->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  an_ig->add_option("data", a.data)->required()->check(CLI::ExistingFile);
  an_ig->add_option("--nodes", a.nodes, "Comma-separated node indices");
  add_common(an_ig, common);
  auto* an_ab = analyze->add_subcommand("ablate", "Node-removal ablation");
  an_ab->add_option("cell", a.cell)->required()->check(CLI::ExistingFile);
  an_ab->add_option("--evaluator", a.evaluator)->check(CLI::IsMember({"synthetic", "trainer"}));
  an_ab->add_option("--data", a.data)->check(CLI::ExistingFile);
  an_ab->add_option("--seeds", a.seeds)->check(CLI::PositiveNumber);
  add_common(an_ab, common);

  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* multiscale = bench->add_subcommand("multiscale", "Multi-scale vs single-kernel models");
  multiscale->add_option("data", a.data)->required()->check(CLI::ExistingFile);
  multiscale->add_option("--seeds", a.seeds)->check(CLI::PositiveNumber);
  add_common(multiscale, common);

  auto* evp = app.add_subcommand("eval-predictors", "Held-out Spearman of the surrogates");
  evp->add_option("--evaluator", a.evaluator)->check(CLI::IsMember({"synthetic", "trainer"}));
  evp->add_option("--cae", a.cae)->check(CLI::ExistingFile);
  evp->add_option("--data", a.data)->check(CLI::ExistingFile);
  evp->add_option("--seeds", a.seeds)->check(CLI::PositiveNumber);
  add_common(evp, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::string name;
  int (*fn)(Run&, const Args&, const json&) = nullptr;
  if (*gen) name = "gen", fn = cmd_gen;
  else if (*val) name = "validate", fn = cmd_validate;
  else if (*mut) name = "mutate", fn = cmd_mutate;
  else if (*rf) name = "rf", fn = cmd_rf;
  else if (*cmp) name = "compile", fn = cmd_compile;
  else if (*data) name = "data " + std::string(*data_gen ? "gen" : "convert"), a.data_sub = *data_gen ? "gen" : "convert", fn = cmd_data;
  else if (*pcae) name = "pretrain-cae", fn = cmd_pretrain_cae;
  else if (*pvae) name = "pretrain-vae", fn = cmd_pretrain_vae;
  else if (*search) name = "search", fn = cmd_search;
  else if (*analyze) {
    a.analyze_sub = *an_cwt ? "cwt" : *an_ig ? "ig" : "ablate";
    name = "analyze " + a.analyze_sub;
    fn = cmd_analyze;
  } else if (*bench) name = "bench multiscale", fn = cmd_bench;
  else if (*evp) name = "eval-predictors", fn = cmd_eval_predictors;

  Run run(name, common, std::vector<std::string>(argv, argv + argc));
  int code = 0;
  try {
    const json cfg = load_config(common);
    if (!common.config_path.empty()) run.input(common.config_path);
    code = fn(run, a, cfg);
    run.finish(code);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    run.finish(1, e.what());
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    run.finish(1, e.what());
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    run.finish(2, e.what());
    return 2;
  }
  return code;
}
