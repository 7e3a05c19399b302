#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "samst/accounting.hpp"
#include "samst/gradcheck.hpp"
#include "samst/service.hpp"

using namespace samst;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct TrainArgs {
  std::string contents, styles, config, out, backbone;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
};

int cmd_train(const TrainArgs& a) {
  auto pc = load_project_config(a.config);
  if (a.seed) pc.train.seed = *a.seed;
  if (a.iterations) pc.train.iterations = *a.iterations;
  if (!a.backbone.empty()) pc.backbone = a.backbone;
  const auto contents = load_image_dir(a.contents);
  std::vector<NamedImage<float>> styles;
  for (const auto& p : list_png_files(a.styles)) {
    const auto name = p.stem().string();
    styles.push_back({slugify(name), name, load_image(p)});
  }
  if (styles.empty()) throw IoError("no PNG files in '" + a.styles + "'");
  const auto backbone = make_backbone(pc.backbone);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  {
    const auto text = dump_project_config(pc);
    write_file_atomic(out / "config.json", text.data(), text.size());
  }
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  auto model = SamstModel<float>::initialize(pc.network, pc.train.seed);
  auto codebook = initial_codebook(styles, pc.network.style_dim);

  TrainHooks<float> hooks;
  hooks.on_iteration = [&](const IterationRecord& r) {
    log << nlohmann::json(r).dump() << '\n';
    if ((r.iteration + 1) % 100 == 0 || r.iteration + 1 == pc.train.iterations) {
      std::fprintf(stderr, "iter %zu/%zu  loss %.4f  (content %.3f style %.3f ae %.3f geo %.4f)\n", r.iteration + 1,
                   pc.train.iterations, r.total, r.content, r.style_loss, r.reconstruction, r.geometric);
    }
  };
  hooks.on_checkpoint = [&](std::size_t done, const SamstModel<float>& m, const StyleCodebook& cb) {
    save_model_bundle(m, pc, out / "model.samst");
    save_codebook(cb, out / "codebook.tsv");
    log.flush();
    std::fprintf(stderr, "checkpoint at %zu iterations\n", done);
  };
  const auto report = train_general(pc.train, contents, styles, model, codebook, backbone, hooks);
  if (report.records.empty()) {
    save_model_bundle(model, pc, out / "model.samst");
    save_codebook(codebook, out / "codebook.tsv");
  }
  nlohmann::json summary = {{"model", (out / "model.samst").string()},
                            {"codebook", (out / "codebook.tsv").string()},
                            {"fingerprint", model_fingerprint(model)},
                            {"iterations", report.records.size()},
                            {"wall_ms", report.wall_ms}};
  if (!report.records.empty()) {
    const std::size_t n = report.records.size(), k = std::min<std::size_t>(50, n);
    summary["loss_first"] = mean_total(report.records, 0, k);
    summary["loss_last"] = mean_total(report.records, n - k, n);
  }
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

struct AddStyleArgs {
  std::string model, codebook, style, name, out, contents, id, backbone;
  std::optional<std::size_t> iterations;
  bool allow_mismatch = false;
};

int cmd_add_style(const AddStyleArgs& a) {
  auto bundle = load_model_bundle(a.model);
  const auto cb = load_codebook(a.codebook, model_fingerprint(bundle.model), a.allow_mismatch);
  auto cfg = bundle.train;
  if (a.iterations) cfg.incremental_iterations = *a.iterations;
  const auto contents = a.contents.empty() ? fallback_contents(cfg) : load_image_dir(a.contents);
  const auto backbone = make_backbone(a.backbone.empty() ? bundle.backbone : a.backbone);
  const std::string id = a.id.empty() ? slugify(a.name) : a.id;
  TrainHooks<float> hooks;
  hooks.on_iteration = [&](const IterationRecord& r) {
    if ((r.iteration + 1) % 500 == 0) std::fprintf(stderr, "%s iter %zu  loss %.4f\n", id.c_str(), r.iteration + 1, r.total);
  };
  const auto result =
      train_incremental(cfg, contents, {{id, a.name, load_image(a.style)}}, bundle.model, cb, backbone, hooks);
  save_codebook(result.codebook, a.out);
  const auto& s = result.report.styles.front();
  std::cout << nlohmann::json{{"style_id", id}, {"codebook", a.out}, {"iterations", s.iterations},
                              {"loss_first", s.first_loss}, {"loss_last", s.last_loss}}
                   .dump(2)
            << '\n';
  return kExitOk;
}

struct StylizeArgs {
  std::string model, codebook, content, style, weights, out;
  double alpha = 1.0;
  bool allow_mismatch = false;
};

int cmd_stylize(const StylizeArgs& a) {
  const auto model = load_model(a.model);
  const auto cb = load_codebook(a.codebook, model_fingerprint(model), a.allow_mismatch);
  StyleMix mix;
  mix.alpha = a.alpha;
  if (!a.weights.empty()) {
    try {
      mix.weights = parse_weight_list(a.weights);
    } catch (const ContractError& e) {
      throw CLI::ValidationError("--weights", e.what());
    }
  } else {
    mix.weights = {{a.style, 1.0}};
  }
  const auto out = stylize_png(model, cb, load_image(a.content), mix);
  if (out.normalized) std::fprintf(stderr, "warning: weights did not sum to 1 and were normalized\n");
  write_file_atomic(a.out, out.png);
  std::fprintf(stderr, "stylized in %.2f ms\n", out.millis);
  return kExitOk;
}

int cmd_info(const std::string& config, const std::string& input, bool latency) {
  const auto pc = config.empty() ? ProjectConfig{} : load_project_config(config);
  std::size_t h = 0, w = 0;
  if (std::sscanf(input.c_str(), "%zux%zu", &h, &w) != 2 || h == 0 || w == 0) {
    throw CLI::ValidationError("--input", "expected HxW, e.g. 512x512");
  }
  const auto acc = account(pc.network, h, w);
  std::printf("%-22s %14s %14s\n", "quantity", "actual", "reference");
  std::printf("%-22s %14.4f %14s\n", "params_total (M)", acc.params_total / 1e6, "0.91");
  std::printf("%-22s %14.4f %14s\n", "params_oip (M)", acc.params_oip / 1e6, "0.11");
  std::printf("%-22s %14.4f %14s\n", "flops (G)", acc.flops / 1e9, "5.31");
  std::printf("%-22s %14llu %14s\n", "floats per style", static_cast<unsigned long long>(acc.params_per_style), "16");
  std::printf("input %zux%zu; reference column is for 512x512\n", h, w);
  if (latency) {
    const auto model = SamstModel<float>::initialize(pc.network, 1);
    CounterRng rng(2);
    const auto img = Tensor<float>::uniform(Shape{3, h, w}, rng, 0, 1);
    const auto adapted = model.predict_adapted_params(StyleRepresentation::ones("s", "s", pc.network.style_dim));
    model.stylize(img, adapted);
    double best = 1e300;
    for (int i = 0; i < 3; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      model.stylize(img, adapted);
      best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::printf("%-22s %14.1f %14s\n", "latency (ms, 1 thread)", best, "50");
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto r = run_gradcheck(seed);
  std::printf("%-40s %6s  %-10s  %-10s  %s\n", "parameter", "count", "max |grad|", "max |diff|", "max rel err");
  for (const auto& p : r.params) {
    std::printf("%-40s %6zu  %.3e   %.3e   %.3e\n", p.name.c_str(), p.count, p.max_abs_grad, p.max_abs_diff, p.max_rel);
  }
  std::printf("checked %zu gradients in %.1f s; max relative error %.3e (limit 1e-4)\n", r.checked, r.seconds,
              r.max_rel);
  return r.max_rel < 1e-4 ? kExitOk : kExitNumeric;
}

struct ServeArgs {
  std::string model, codebook, host = "127.0.0.1", contents, backbone;
  int port = 0;
  std::optional<std::size_t> iterations;
  bool allow_mismatch = false;
};

int cmd_serve(const ServeArgs& a) {
  int port = a.port;
  if (port == 0) {
    const char* env = std::getenv("SAMST_PORT");
    port = env ? std::atoi(env) : 8080;
  }
  // The server answers 503 until the model and codebook are loaded.
  auto bundle = load_model_bundle(a.model);
  auto cfg = bundle.train;
  if (a.iterations) cfg.incremental_iterations = *a.iterations;
  StyleService::Options opts;
  opts.train = cfg;
  opts.backbone = make_backbone(a.backbone.empty() ? bundle.backbone : a.backbone);
  if (!a.contents.empty()) opts.contents = load_image_dir(a.contents);
  opts.codebook_path = a.codebook;
  StyleService svc(std::move(opts));
  httplib::Server server;
  install_routes(server, svc);
  if (!server.bind_to_port(a.host, port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(port));
  std::thread listener([&] { server.listen_after_bind(); });
  auto model = std::make_shared<const SamstModel<float>>(std::move(bundle.model));
  auto cb = std::make_shared<const StyleCodebook>(load_codebook(a.codebook, model_fingerprint(*model), a.allow_mismatch));
  svc.publish(model, cb);
  std::fprintf(stderr, "serving %zu styles on http://%s:%d\n", cb->size(), a.host.c_str(), port);
  listener.join();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-adaptive stylization: training, style addition, inference and serving"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train network and codebook jointly on content and style folders");
  t->add_option("--contents", train.contents, "Directory of content PNGs")->required();
  t->add_option("--styles", train.styles, "Directory of style PNGs (file stem becomes the style name)")->required();
  t->add_option("--config", train.config, "Project config JSON")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--seed", train.seed, "Override train.seed");
  t->add_option("--iterations", train.iterations, "Override train.iterations");
  t->add_option("--backbone", train.backbone, "'test' or a converted VGG16 archive");

  AddStyleArgs add;
  auto* as = app.add_subcommand("add-style", "Learn one new style with the network frozen");
  as->add_option("--model", add.model, "Model archive")->required();
  as->add_option("--codebook", add.codebook, "Codebook to extend")->required();
  as->add_option("--style", add.style, "Style PNG")->required();
  as->add_option("--name", add.name, "Display name")->required();
  as->add_option("--out", add.out, "Output codebook path")->required();
  as->add_option("--id", add.id, "Style id (default: derived from the name)");
  as->add_option("--contents", add.contents, "Content PNG directory (default: synthetic contents)");
  as->add_option("--iterations", add.iterations, "Override train.incremental_iterations");
  as->add_option("--backbone", add.backbone, "Override the backbone recorded in the model");
  as->add_flag("--allow-mismatch", add.allow_mismatch, "Accept a codebook trained for other weights");

  StylizeArgs sty;
  auto* st = app.add_subcommand("stylize", "Stylize one image with a single style");
  st->add_option("--model", sty.model, "Model archive")->required();
  st->add_option("--codebook", sty.codebook, "Codebook")->required();
  st->add_option("--content", sty.content, "Content PNG")->required();
  st->add_option("--style", sty.style, "Style id")->required();
  st->add_option("--alpha", sty.alpha, "Stylization degree in [0, 1]");
  st->add_option("--out", sty.out, "Output PNG")->required();
  st->add_flag("--allow-mismatch", sty.allow_mismatch, "Accept a codebook trained for other weights");

  StylizeArgs mix;
  auto* ip = app.add_subcommand("interpolate", "Stylize with a weighted mix of styles");
  ip->add_option("--model", mix.model, "Model archive")->required();
  ip->add_option("--codebook", mix.codebook, "Codebook")->required();
  ip->add_option("--content", mix.content, "Content PNG")->required();
  ip->add_option("--weights", mix.weights, "Style weights as id=w,id=w")->required();
  ip->add_option("--alpha", mix.alpha, "Stylization degree in [0, 1]");
  ip->add_option("--out", mix.out, "Output PNG")->required();
  ip->add_flag("--allow-mismatch", mix.allow_mismatch, "Accept a codebook trained for other weights");

  std::string info_config, info_input = "512x512";
  bool info_latency = false;
  auto* in = app.add_subcommand("info", "Parameter, OIP and FLOP accounting for a config");
  in->add_option("--config", info_config, "Project config JSON (default: built-in paper-scale defaults)");
  in->add_option("--input", info_input, "Input size HxW");
  in->add_flag("--latency", info_latency, "Also time one single-threaded stylization");

  std::uint64_t gc_seed = 7;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient on a tiny network");
  gc->add_option("--seed", gc_seed, "Seed");

  ServeArgs serve;
  auto* sv = app.add_subcommand("serve", "HTTP API for stylization and style addition");
  sv->add_option("--model", serve.model, "Model archive")->required();
  sv->add_option("--codebook", serve.codebook, "Codebook (rewritten when a style job finishes)")->required();
  sv->add_option("--port", serve.port, "Port (default: $SAMST_PORT or 8080)");
  sv->add_option("--host", serve.host, "Bind address");
  sv->add_option("--contents", serve.contents, "Content PNG directory for style jobs");
  sv->add_option("--iterations", serve.iterations, "Iterations per style job");
  sv->add_option("--backbone", serve.backbone, "Override the backbone recorded in the model");
  sv->add_flag("--allow-mismatch", serve.allow_mismatch, "Accept a codebook trained for other weights");

  try {
    app.parse(argc, argv);
    if (*t) return cmd_train(train);
    if (*as) return cmd_add_style(add);
    if (*st) return cmd_stylize(sty);
    if (*ip) return cmd_stylize(mix);
    if (*in) return cmd_info(info_config, info_input, info_latency);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*sv) return cmd_serve(serve);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
