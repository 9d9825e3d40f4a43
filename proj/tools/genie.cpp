#include "genie/checkpoint.hpp"
#include "genie/config.hpp"
#include "genie/dataset.hpp"
#include "genie/edit_script.hpp"
#include "genie/parallel.hpp"
#include "genie/pipeline.hpp"
#include "genie/service.hpp"
#include "genie/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace genie;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

/// Usage and I/O problems; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << "genie: error: " << kind << ": " << message << '\n';
  return code;
}

/// Flags shared by several subcommands; unset optionals keep config values.
struct Overrides {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::optional<double> q;
  std::optional<int> k;
  std::optional<int> steps;
  std::optional<std::string> mode;
  bool rawEigenvalueRadius = false;
  std::optional<std::string> confidenceMode;
  std::optional<bool> learnableMeans;

  void apply(RunConfig& c) const {
    if (seed) c.train.seed = *seed;
    c.train.threads = threads;
    c.render.threads = threads;
    if (q) c.render.splash.q = *q;
    if (k) c.render.splash.k = *k;
    if (steps) c.train.steps = *steps;
    if (mode) c.render.splash.mode = parse_feature_mode(*mode);
    if (rawEigenvalueRadius) c.render.splash.radiusMode = RadiusMode::RawEigenvalue;
    if (confidenceMode) c.train.prune.mode = parse_confidence_mode(*confidenceMode);
    if (learnableMeans) c.train.learnableMeans = *learnableMeans;
  }
};

void addSeed(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Random seed (default from config, else 0)");
}
void addThreads(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
}
void addSplash(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--q", o.q, "Confidence quantile Q")->check(CLI::PositiveNumber);
  cmd->add_option("--k", o.k, "Neighbor budget k")->check(CLI::PositiveNumber);
  cmd->add_option("--mode", o.mode, "Feature mode")->check(CLI::IsMember({"live", "baked"}));
  cmd->add_flag("--raw-eigenvalue-radius", o.rawEigenvalueRadius,
                "Radius Q * max variance instead of Q * max stddev");
}

RunConfig loadConfig(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::exists(path)) throw UsageError("config not found: " + path);
  return load_run_config(path);
}

SceneCheckpoint loadCheckpointOrThrow(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

/// Applies splash/render overrides to a checkpoint's render config only.
void applyRenderOverrides(const Overrides& o, RenderConfig& r) {
  RunConfig c;
  c.render = r;
  o.apply(c);
  r = c.render;
}

// -- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, dataset, out, resume;
  std::size_t initPoints = 3000;
  Overrides o;
};

int cmdTrain(const TrainArgs& a) {
  if (!fs::exists(a.dataset)) throw UsageError("dataset not found: " + a.dataset);
  const LoadedDataset ds = load_dataset(a.dataset);
  RunConfig cfg = loadConfig(a.config);
  a.o.apply(cfg);
  cfg.render.background = ds.data.background;

  SceneBundle bundle;
  std::optional<TrainingState> resume;
  if (!a.resume.empty()) {
    SceneCheckpoint ckpt = loadCheckpointOrThrow(a.resume);
    bundle = std::move(ckpt.bundle);
    resume = std::move(ckpt.training);
    if (a.o.steps) bundle.train.steps = *a.o.steps;
  } else {
    std::vector<InitPoint> points;
    if (!ds.manifest.initPoints.empty()) {
      points = read_init_points(ds.manifest.initPoints);
    } else {
      points = random_init_points(cfg.hashgrid, a.initPoints, cfg.train.seed + 1);
    }
    GaussianSet initial = gaussians_from_points(points, Vec3::Constant(cfg.train.initLogScale),
                                                static_cast<std::size_t>(cfg.hashgrid.outputDim()));
    bundle = make_bundle(cfg, std::move(initial));
  }
  TrainOptions opt;
  opt.checkpointPath = a.out;
  opt.log = &std::cerr;
  const auto t0 = std::chrono::steady_clock::now();
  SceneBundle out = run_training(std::move(bundle), ds.data, opt, std::move(resume));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "done steps=" << out.train.steps << " gaussians=" << out.set.size()
            << " seconds=" << secs << " checkpoint=" << a.out << '\n';
  return kOk;
}

// -- render -----------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint, camera, dataset, out, raw;
  int view = -1;
  int samples = 0;
  Overrides o;
};

int cmdRender(const RenderArgs& a) {
  SceneCheckpoint ckpt = loadCheckpointOrThrow(a.checkpoint);
  Camera camera;
  if (!a.camera.empty()) {
    std::ifstream in(a.camera);
    if (!in) throw UsageError("cannot open camera file: " + a.camera);
    json j;
    try {
      in >> j;
      camera = camera_from_json(j);
    } catch (const std::exception& e) {
      throw UsageError(a.camera + ": " + e.what());
    }
  } else {
    if (a.dataset.empty() || a.view < 0) throw UsageError("pass --camera, or --dataset with --view");
    const LoadedDataset ds = load_dataset(a.dataset);
    if (a.view >= static_cast<int>(ds.data.cameras.size())) {
      throw UsageError("--view " + std::to_string(a.view) + " beyond " +
                       std::to_string(ds.data.cameras.size()) + " dataset views");
    }
    camera = ds.data.cameras[static_cast<std::size_t>(a.view)];
  }
  RenderConfig rc = ckpt.bundle.render;
  const bool baked = std::all_of(ckpt.bundle.set.gaussians().begin(), ckpt.bundle.set.gaussians().end(),
                                 [](const Gaussian& g) { return g.baked; });
  rc.splash.mode = baked ? FeatureMode::Baked : FeatureMode::Live;
  applyRenderOverrides(a.o, rc);
  ckpt.bundle.render.splash = rc.splash;
  if (a.o.seed) rc.seed = *a.o.seed;
  if (a.samples > 0) rc.samples = a.samples;
  std::optional<ProximityIndex> index;
  if (!ckpt.bundle.set.empty()) index = build_index(ckpt);
  const FeatureTable features = resolve_features(ckpt.bundle.set, ckpt.bundle.grid, rc.splash.mode);
  FieldScene scene{&ckpt.bundle.set, index ? &*index : nullptr, &features, &ckpt.bundle.net};
  const Image img = render_image(camera, scene, rc);
  Rgba8Image png = to_rgba8(img);
  for (std::size_t p = 3; p < png.rgba.size(); p += 4) png.rgba[p] = 255;
  write_png(a.out, png);
  if (!a.raw.empty()) {
    const auto bytes = raw_float_dump(img);
    std::ofstream f(a.raw, std::ios::binary);
    if (!f) throw UsageError("cannot write " + a.raw);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  return kOk;
}

// -- edit -------------------------------------------------------------------

struct EditArgs {
  std::string checkpoint, script, out;
};

int cmdEdit(const EditArgs& a) {
  SceneCheckpoint ckpt = loadCheckpointOrThrow(a.checkpoint);
  std::ifstream in(a.script);
  if (!in) throw UsageError("cannot open edit script: " + a.script);
  std::stringstream text;
  text << in.rdbuf();
  std::vector<json> commands;
  try {
    commands = parse_edit_script(text.str());
  } catch (const EditError& e) {
    return fail(kFailed, "edit", e.what());
  }
  EditContext ctx;
  ctx.baseDir = fs::path(a.script).parent_path().string();
  ctx.q = ckpt.bundle.render.splash.q;
  const std::vector<double>* radii = ckpt.radii ? &*ckpt.radii : nullptr;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    try {
      const EditOutcome outcome = apply_edit_command(ckpt.bundle.set, commands[i], ctx);
      for (const std::string& w : outcome.warnings) std::cerr << "warning: command " << i << ": " << w << '\n';
    } catch (const EditError& e) {
      return fail(kFailed, "edit", "command " + std::to_string(i) + ": " + e.what());
    }
    if (commands[i].contains("snapshot")) {
      if (!commands[i]["snapshot"].is_string()) {
        return fail(kFailed, "edit", "command " + std::to_string(i) + ": snapshot must be a path");
      }
      fs::path snap(commands[i]["snapshot"].get<std::string>());
      if (snap.is_relative() && !ctx.baseDir.empty()) snap = fs::path(ctx.baseDir) / snap;
      save_checkpoint(ckpt.bundle, nullptr, snap.string(), radii);
    }
  }
  save_checkpoint(ckpt.bundle, nullptr, a.out, radii);
  std::cerr << "applied " << commands.size() << " edits, epoch=" << ckpt.bundle.set.epoch() << '\n';
  return kOk;
}

// -- verify -----------------------------------------------------------------

struct VerifyArgs {
  std::string checkpoint;
  VerifyOptions opt;
  Overrides o;
};

int cmdVerify(VerifyArgs a) {
  SceneCheckpoint ckpt = loadCheckpointOrThrow(a.checkpoint);
  applyRenderOverrides(a.o, ckpt.bundle.render);
  if (a.o.seed) a.opt.seed = *a.o.seed;
  const std::vector<CheckResult> results = verify_checkpoint(ckpt, a.opt);
  bool ok = true;
  for (const CheckResult& r : results) {
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(26) << r.name << r.detail
              << '\n';
    ok = ok && r.passed;
  }
  if (!ok) {
    for (const CheckResult& r : results) {
      if (!r.passed) std::cerr << "genie: error: verify: " << r.name << " failed\n";
    }
  }
  return ok ? kOk : kFailed;
}

// -- bench ------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::size_t> n{1000, 10000, 100000};
  std::vector<int> k{16};
  std::vector<double> q{2.0};
  int queries = 2000;
  int raysSide = 32;
  Overrides o;
};

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(p * static_cast<double>(v.size() - 1))];
}

int cmdBench(const BenchArgs& a) {
  using clock = std::chrono::steady_clock;
  const std::uint64_t seed = a.o.seed.value_or(0);
  std::cout << "n,k,Q,build_ms,query_us_p50,query_us_p99,brute_us_p50,rays_per_s\n";
  for (std::size_t n : a.n) {
    std::mt19937_64 rng(mix_seed(seed, n));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    HashGridConfig hg;
    hg.tableSize = 1u << 15;
    std::vector<Vec3> means(n), scales(n);
    // Constant expected occupancy: spacing shrinks like n^(-1/3).
    const double std0 = 0.6 / std::cbrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      means[i] = Vec3(u(rng), u(rng), u(rng));
      scales[i] = Vec3::Constant(std::log(std0 * std0 * (0.5 + 0.5 * (u(rng) + 1))));
    }
    GaussianSet set = make_initial_gaussians(means, scales, static_cast<std::size_t>(hg.outputDim()));
    const HashGrid grid(hg, seed + 1);
    FieldArch arch;
    arch.inputDim = hg.outputDim();
    const FieldNetwork net = FieldNetwork::init(arch, seed + 2);
    const FeatureTable features = live_features(set, grid);
    std::vector<Vec3> queries(static_cast<std::size_t>(a.queries));
    for (Vec3& x : queries) x = Vec3(u(rng), u(rng), u(rng));
    for (double q : a.q) {
      const auto b0 = clock::now();
      const ProximityIndex index = ProximityIndex::build(set, q);
      const double buildMs = std::chrono::duration<double, std::milli>(clock::now() - b0).count();
      for (int k : a.k) {
        std::vector<double> fast, slow;
        NeighborResult res;
        for (const Vec3& x : queries) {
          const auto t0 = clock::now();
          index.query(set, x, k, res);
          fast.push_back(std::chrono::duration<double, std::micro>(clock::now() - t0).count());
        }
        const std::size_t bruteQueries = std::min<std::size_t>(queries.size(), 200);
        for (std::size_t i = 0; i < bruteQueries; ++i) {
          const auto t0 = clock::now();
          res = brute_force_query(set, queries[i], k, q);
          slow.push_back(std::chrono::duration<double, std::micro>(clock::now() - t0).count());
        }
        RenderConfig rc;
        rc.splash.k = k;
        rc.splash.q = q;
        rc.threads = a.o.threads;
        const Camera cam = look_at_camera(Vec3(0, -3.5, 1.5), Vec3::Zero(), Vec3::UnitZ(),
                                          focal_from_fov(0.9, a.raysSide), a.raysSide, a.raysSide,
                                          1.0, 6.0);
        FieldScene scene{&set, &index, &features, &net};
        const auto r0 = clock::now();
        render_image(cam, scene, rc);
        const double renderS = std::chrono::duration<double>(clock::now() - r0).count();
        std::cout << n << ',' << k << ',' << q << ',' << buildMs << ',' << percentile(fast, 0.5) << ','
                  << percentile(fast, 0.99) << ',' << percentile(slow, 0.5) << ','
                  << (a.raysSide * a.raysSide) / renderS << '\n';
      }
    }
  }
  return kOk;
}

// -- serve ------------------------------------------------------------------

struct ServeArgs {
  std::string checkpoint;
  ServiceOptions opt;
  Overrides o;
};

EditService* gService = nullptr;

int cmdServe(ServeArgs a) {
  a.opt.threads = a.o.threads;
  if (a.o.seed) a.opt.seed = *a.o.seed;
  EditService service(a.opt);
  if (!a.checkpoint.empty()) {
    try {
      service.session().load(a.checkpoint);
    } catch (const ServiceError& e) {
      return fail(kUsage, "serve", e.what());
    }
  }
  gService = &service;
  std::signal(SIGINT, [](int) {
    if (gService) gService->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (gService) gService->stop();
  });
  std::cerr << "serving on http://" << a.opt.bind << ':' << a.opt.port << '\n';
  if (!service.listen()) return fail(kUsage, "serve", "cannot bind " + a.opt.bind + ":" + std::to_string(a.opt.port));
  gService = nullptr;
  return kOk;
}

// -- gen-toy ----------------------------------------------------------------

struct ToyArgs {
  std::string out;
  ToySpec spec;
  std::uint64_t seed = 1;
};

int cmdGenToy(const ToyArgs& a) {
  const ToyScene toy = generate_toy_scene(a.spec, a.seed);
  fs::create_directories(a.out);
  write_init_points((fs::path(a.out) / "init_points.txt").string(), toy_init_points(toy, a.seed + 1));
  write_dataset(a.out, toy.dataset, a.spec.fovDeg * M_PI / 180.0, "init_points.txt");
  std::ofstream cfg(fs::path(a.out) / "config.json");
  if (!cfg) throw UsageError("cannot write config in " + a.out);
  cfg << to_json(toy_run_config()).dump(2) << '\n';
  std::cerr << "wrote " << toy.dataset.cameras.size() << " views to " << a.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GENIE: Gaussian-conditioned neural fields with editable primitives"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a scene from a posed image dataset");
  t->add_option("--config", train.config, "Run config JSON");
  t->add_option("--dataset", train.dataset, "Dataset directory or transforms.json")->required();
  t->add_option("--out", train.out, "Output checkpoint")->required();
  t->add_option("--resume", train.resume, "Continue from a checkpoint with training state");
  t->add_option("--init-points", train.initPoints, "Random initial Gaussians when the dataset has none");
  t->add_option("--steps", train.o.steps, "Training steps")->check(CLI::NonNegativeNumber);
  t->add_option("--confidence-mode", train.o.confidenceMode, "Confidence update rule")
      ->check(CLI::IsMember({"additive", "multiplicative"}));
  t->add_flag("--learnable-means,!--no-learnable-means", train.o.learnableMeans,
              "Train Gaussian means (default on)");
  addSeed(t, train.o);
  addThreads(t, train.o);
  addSplash(t, train.o);

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a checkpoint to PNG");
  r->add_option("--checkpoint", render.checkpoint, "Scene checkpoint")->required();
  auto* camOpt = r->add_option("--camera", render.camera, "Camera JSON file");
  auto* dsOpt = r->add_option("--dataset", render.dataset, "Dataset supplying the camera");
  r->add_option("--view", render.view, "Dataset view index")->needs(dsOpt);
  camOpt->excludes(dsOpt);
  r->add_option("--out", render.out, "Output PNG")->required();
  r->add_option("--raw", render.raw, "Also write a raw float dump");
  r->add_option("--samples", render.samples, "Samples per ray (default from checkpoint)");
  addSeed(r, render.o);
  addThreads(r, render.o);
  addSplash(r, render.o);

  EditArgs edit;
  auto* e = app.add_subcommand("edit", "Apply an edit script to a checkpoint");
  e->add_option("--checkpoint", edit.checkpoint, "Input checkpoint")->required();
  e->add_option("--script", edit.script, "Edit script JSON")->required();
  e->add_option("--out", edit.out, "Output checkpoint")->required();

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Run oracle suites against a checkpoint");
  v->add_option("--checkpoint", verify.checkpoint, "Scene checkpoint")->required();
  v->add_option("--suite", verify.opt.suite, "Suite to run")
      ->check(CLI::IsMember({"all", "rtgps", "drop-bound", "gradients"}));
  v->add_option("--queries", verify.opt.queries, "Index queries");
  v->add_option("--trials", verify.opt.dropTrials, "Drop-bound trials per epsilon");
  v->add_option("--epsilon", verify.opt.epsilons, "Drop-bound epsilons")->delimiter(',');
  addSeed(v, verify.o);
  addSplash(v, verify.o);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time index build/query and rendering; CSV on stdout");
  b->add_option("--n", bench.n, "Gaussian counts")->delimiter(',');
  b->add_option("--k", bench.k, "Neighbor budgets")->delimiter(',');
  b->add_option("--q", bench.q, "Quantiles")->delimiter(',');
  b->add_option("--queries", bench.queries, "Queries per row");
  b->add_option("--rays-side", bench.raysSide, "Render benchmark image side");
  addSeed(b, bench.o);
  addThreads(b, bench.o);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run the local edit service");
  s->add_option("--checkpoint", serve.checkpoint, "Checkpoint to load at startup");
  s->add_option("--bind", serve.opt.bind, "Listen address (default loopback)");
  s->add_option("--port", serve.opt.port, "Listen port");
  s->add_option("--base-dir", serve.opt.baseDir, "Directory for relative paths");
  s->add_flag("--queue-writers", serve.opt.queueWriters, "Queue concurrent edits instead of 409");
  addSeed(s, serve.o);
  addThreads(s, serve.o);

  ToyArgs toy;
  auto* g = app.add_subcommand("gen-toy", "Write the procedural toy dataset");
  g->add_option("--out", toy.out, "Output directory")->required();
  g->add_option("--seed", toy.seed, "Scene seed");
  g->add_option("--blobs", toy.spec.blobs, "Blob count");
  g->add_option("--cameras", toy.spec.cameras, "Camera count");
  g->add_option("--width", toy.spec.width, "Image width");
  g->add_option("--height", toy.spec.height, "Image height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*t) return cmdTrain(train);
    if (*r) return cmdRender(render);
    if (*e) return cmdEdit(edit);
    if (*v) return cmdVerify(verify);
    if (*b) return cmdBench(bench);
    if (*s) return cmdServe(serve);
    if (*g) return cmdGenToy(toy);
  } catch (const UsageError& err) {
    return fail(kUsage, "usage", err.what());
  } catch (const DatasetError& err) {
    return fail(kUsage, "dataset", err.what());
  } catch (const CheckpointError& err) {
    return fail(kUsage, "checkpoint", err.what());
  } catch (const ConfigError& err) {
    return fail(kUsage, "config", err.what());
  } catch (const EditError& err) {
    return fail(kFailed, "edit", err.what());
  } catch (const std::exception& err) {
    return fail(kUsage, "runtime", err.what());
  }
  return kUsage;
}
