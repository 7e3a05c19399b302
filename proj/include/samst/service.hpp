#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "samst/archive.hpp"
#include "samst/codebook_io.hpp"
#include "samst/config.hpp"
#include "samst/image.hpp"
#include "samst/synthetic.hpp"
#include "samst/trainer.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with Eigen internals.
#include <httplib.h>

namespace samst {

// Base64 (RFC 4648, padded).

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

// Accepts an optional "data:...;base64," prefix and ignores whitespace.
inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    if (comma == std::string_view::npos) throw FormatError("base64: malformed data URL");
    text.remove_prefix(comma + 1);
  }
  std::string s;
  s.reserve(text.size());
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  if (s.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(s.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(s.data()), static_cast<int>(s.size()));
  if (n < 0) throw FormatError("base64: invalid character");
  std::size_t pad = 0;
  while (pad < 2 && pad < s.size() && s[s.size() - 1 - pad] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// Deployment helpers shared by the CLI and the server.

inline FeatureBackbone<float> make_backbone(const std::string& spec) {
  if (spec.empty() || spec == "test") return FeatureBackbone<float>::test_backbone();
  return load_backbone(spec);
}

// A trained model archive also records how it was trained, so add-style can
// reuse the same settings.
struct ModelBundle {
  SamstModel<float> model;
  TrainConfig train;
  std::string backbone = "test";
  std::string fingerprint;
};

inline std::string save_model_bundle(const SamstModel<float>& model, const ProjectConfig& pc,
                                     const std::filesystem::path& path) {
  auto a = model_archive(model);
  a.metadata["train"] = nlohmann::json(pc.train).dump();
  a.metadata["backbone"] = pc.backbone;
  return save_archive(a, path);
}

inline ModelBundle load_model_bundle(const std::filesystem::path& path) {
  const auto a = load_archive(path);
  ModelBundle b{model_from_archive(a), {}, "test", archive_digest(a)};
  if (auto it = a.metadata.find("train"); it != a.metadata.end()) {
    try {
      b.train = nlohmann::json::parse(it->second).get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("model archive train metadata: ") + e.what());
    }
  }
  if (auto it = a.metadata.find("backbone"); it != a.metadata.end()) b.backbone = it->second;
  return b;
}

// Lower-case id from a display name: alphanumerics kept, other runs become '-'.
inline std::string slugify(const std::string& name) {
  std::string out;
  for (unsigned char c : name) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "style" : out;
}

// Deterministic stand-in content pool for add-style when no content images
// are supplied.
inline std::vector<Tensor<float>> fallback_contents(const TrainConfig& cfg, std::size_t count = 8) {
  std::vector<Tensor<float>> out;
  const std::size_t side = 2 * cfg.content_crop;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(synthetic::content<float>(CounterRng(cfg.seed).split(0xC0).split(i), side, side));
  }
  return out;
}

inline std::vector<Tensor<float>> load_image_dir(const std::filesystem::path& dir) {
  std::vector<Tensor<float>> out;
  for (const auto& p : list_png_files(dir)) out.push_back(load_image(p));
  if (out.empty()) throw IoError("no PNG files in '" + dir.string() + "'");
  return out;
}

// Stylization. The CLI and the HTTP service both go through stylize_png.

struct StyleMix {
  std::vector<std::pair<std::string, double>> weights;
  double alpha = 1.0;
};

struct ResolvedStyle {
  StyleRepresentation rep;
  bool normalized = false;
};

// (1 - alpha) f_0 + alpha sum_i w_i f_i.
inline ResolvedStyle resolve_style(const StyleCodebook& cb, const StyleMix& mix) {
  if (mix.weights.empty()) throw ContractError("no styles given");
  std::vector<std::pair<const StyleRepresentation*, double>> entries;
  for (const auto& [id, w] : mix.weights) entries.emplace_back(&cb.at(id), w);
  auto m = mix_representation(entries);
  return {tradeoff_representation(cb.identity(), m.rep, mix.alpha), m.normalized};
}

// "id=w,id=w"
inline std::vector<std::pair<std::string, double>> parse_weight_list(const std::string& text) {
  std::vector<std::pair<std::string, double>> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const auto item = text.substr(pos, comma - pos);
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ContractError("bad weight '" + item + "' (expected id=w)");
    const auto num = item.substr(eq + 1);
    double w = 0;
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), w);
    if (ec != std::errc{} || p != num.data() + num.size()) throw ContractError("bad weight value '" + num + "'");
    out.emplace_back(item.substr(0, eq), w);
    pos = comma + 1;
  }
  return out;
}

struct StylizeOutput {
  std::vector<std::uint8_t> png;
  bool normalized = false;
  double millis = 0;
};

// Any image size is accepted; odd sizes are reflect-padded and cropped back.
inline StylizeOutput stylize_png(const SamstModel<float>& model, const StyleCodebook& cb, const Tensor<float>& content,
                                 const StyleMix& mix) {
  const auto style = resolve_style(cb, mix);
  const auto t0 = std::chrono::steady_clock::now();
  PaddedSize orig{};
  const auto padded = pad_reflect_to_multiple(content, 4, &orig);
  auto out = model.stylize(padded, style.rep);
  if (padded.shape() != content.shape()) out = crop(out, 0, 0, orig.height, orig.width);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {encode_image(out), style.normalized, ms};
}

// Service state: immutable snapshots plus a single background job runner.

struct Snapshot {
  std::shared_ptr<const SamstModel<float>> model;
  std::shared_ptr<const StyleCodebook> codebook;
};

enum class JobState { queued, running, done, failed };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

struct StyleJob {
  std::string id;
  std::string name;
  std::string style_id;
  JobState state = JobState::queued;
  std::size_t iterations_done = 0;
  std::size_t iterations_total = 0;
  std::optional<double> latest_loss;
  std::string error;
};

inline void to_json(nlohmann::json& j, const StyleJob& job) {
  j = {{"job_id", job.id},
       {"name", job.name},
       {"style_id", job.style_id},
       {"state", to_string(job.state)},
       {"iterations_done", job.iterations_done},
       {"iterations_total", job.iterations_total},
       {"latest_loss", job.latest_loss ? nlohmann::json(*job.latest_loss) : nlohmann::json()}};
  if (!job.error.empty()) j["error"] = job.error;
}

class ConflictError : public CodebookError {
 public:
  using CodebookError::CodebookError;
};

class StyleService {
 public:
  struct Options {
    TrainConfig train;
    FeatureBackbone<float> backbone = FeatureBackbone<float>::test_backbone();
    std::vector<Tensor<float>> contents;
    std::optional<std::filesystem::path> codebook_path;  // rewritten after each job
  };

  explicit StyleService(Options opts) : opts_(std::move(opts)) {
    if (opts_.contents.empty()) opts_.contents = fallback_contents(opts_.train);
    worker_ = std::thread([this] { run(); });
  }

  ~StyleService() {
    {
      std::lock_guard lock(jobs_mu_);
      stopping_ = true;
    }
    jobs_cv_.notify_all();
    worker_.join();
  }

  StyleService(const StyleService&) = delete;
  StyleService& operator=(const StyleService&) = delete;

  void publish(std::shared_ptr<const SamstModel<float>> model, std::shared_ptr<const StyleCodebook> codebook) {
    auto snap = std::make_shared<const Snapshot>(Snapshot{std::move(model), std::move(codebook)});
    std::lock_guard lock(snap_mu_);
    snapshot_ = std::move(snap);
  }

  // Null until the first publish.
  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  bool ready() const { return snapshot() != nullptr; }

  // Queues an add-style job. Throws ConflictError when the name or its id is
  // already taken, including by a pending job.
  std::string submit_style(const std::string& name, Tensor<float> image) {
    const auto snap = snapshot();
    if (!snap) throw Error("service is starting");
    if (name.empty()) throw ContractError("style name must not be empty");
    const auto style_id = slugify(name);
    std::lock_guard lock(jobs_mu_);
    if (snap->codebook->find_by_name(name) || snap->codebook->contains(style_id)) {
      throw ConflictError("style '" + name + "' already exists");
    }
    for (const auto& [id, job] : jobs_) {
      if ((job.state == JobState::queued || job.state == JobState::running) &&
          (job.name == name || job.style_id == style_id)) {
        throw ConflictError("style '" + name + "' is already being added");
      }
    }
    StyleJob job;
    job.id = "job-" + std::to_string(++job_counter_);
    job.name = name;
    job.style_id = style_id;
    job.iterations_total = opts_.train.incremental_iterations;
    jobs_[job.id] = job;
    queue_.push_back({job.id, std::move(image)});
    jobs_cv_.notify_all();
    return job.id;
  }

  std::optional<StyleJob> job(const std::string& id) const {
    std::lock_guard lock(jobs_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  // Blocks until no job is queued or running.
  void wait_idle() {
    std::unique_lock lock(jobs_mu_);
    jobs_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
  }

 private:
  struct Pending {
    std::string job_id;
    Tensor<float> image;
  };
  struct Cancelled {};

  void update(const std::string& id, const std::function<void(StyleJob&)>& f) {
    std::lock_guard lock(jobs_mu_);
    f(jobs_.at(id));
  }

  void run() {
    while (true) {
      Pending next;
      {
        std::unique_lock lock(jobs_mu_);
        jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        next = std::move(queue_.front());
        queue_.pop_front();
        busy_ = true;
        jobs_.at(next.job_id).state = JobState::running;
      }
      execute(next);
      {
        std::lock_guard lock(jobs_mu_);
        busy_ = false;
      }
      jobs_cv_.notify_all();
    }
  }

  void execute(const Pending& p) {
    const auto snap = snapshot();
    const auto info = *job(p.job_id);
    TrainHooks<float> hooks;
    hooks.on_iteration = [&](const IterationRecord& rec) {
      {
        std::lock_guard lock(jobs_mu_);
        if (stopping_) throw Cancelled{};
        auto& j = jobs_.at(p.job_id);
        j.iterations_done = rec.iteration + 1;
        j.latest_loss = rec.total;
      }
    };
    try {
      auto result = train_incremental(opts_.train, opts_.contents, {{info.style_id, info.name, p.image}},
                                       *snap->model, *snap->codebook, opts_.backbone, hooks);
      auto cb = std::make_shared<const StyleCodebook>(std::move(result.codebook));
      if (opts_.codebook_path) save_codebook(*cb, *opts_.codebook_path);
      publish(snap->model, std::move(cb));
      update(p.job_id, [](StyleJob& j) { j.state = JobState::done; });
    } catch (const Cancelled&) {
      update(p.job_id, [](StyleJob& j) {
        j.state = JobState::failed;
        j.error = "service shutting down";
      });
    } catch (const std::exception& e) {
      update(p.job_id, [&](StyleJob& j) {
        j.state = JobState::failed;
        j.error = e.what();
      });
    }
  }

  Options opts_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snapshot_;

  mutable std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::map<std::string, StyleJob> jobs_;
  std::deque<Pending> queue_;
  std::size_t job_counter_ = 0;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

// HTTP routes. Bodies are JSON; images travel as base64 PNG.

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

// 400 malformed, 404 unknown style, 409 duplicate, 422 non-finite numbers.
inline int status_for(const std::exception& e) {
  if (dynamic_cast<const ConflictError*>(&e)) return 409;
  if (dynamic_cast<const CodebookError*>(&e)) return 404;
  if (dynamic_cast<const NumericError*>(&e)) return 422;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 400;
  if (dynamic_cast<const Error*>(&e)) return 400;
  return 500;
}

template <class F>
void guarded(StyleService& svc, httplib::Response& res, F&& f) {
  if (!svc.ready()) return send_error(res, 503, "service is starting");
  try {
    f();
  } catch (const std::exception& e) {
    send_error(res, status_for(e), e.what());
  }
}

inline double finite_number(const nlohmann::json& v, const char* what) {
  if (!v.is_number()) {
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "NaN" || s == "nan" || s == "Infinity" || s == "-Infinity" || s == "inf" || s == "-inf") {
        throw NumericError(std::string(what) + " is not finite");
      }
    }
    throw ContractError(std::string(what) + " must be a number");
  }
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw NumericError(std::string(what) + " is not finite");
  return d;
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::out_of_range& e) {
    throw NumericError(std::string("request body holds a number outside double range: ") + e.what());
  } catch (const nlohmann::json::exception&) {
    throw FormatError("request body is not valid JSON");
  }
  if (!j.is_object()) throw FormatError("request body is not a JSON object");
  return j;
}

}  // namespace detail

inline void install_routes(httplib::Server& server, StyleService& svc) {
  using namespace detail;

  server.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) {
    if (!svc.ready()) return send_json(res, 503, {{"status", "starting"}});
    send_json(res, 200, {{"status", "ok"}});
  });

  server.Get("/styles", [&](const httplib::Request&, httplib::Response& res) {
    guarded(svc, res, [&] {
      const auto snap = svc.snapshot();
      nlohmann::json list = nlohmann::json::array();
      list.push_back({{"id", snap->codebook->identity().id}, {"name", snap->codebook->identity().name}});
      for (const auto& e : snap->codebook->entries()) list.push_back({{"id", e.id}, {"name", e.name}});
      send_json(res, 200, {{"styles", list}, {"fingerprint", snap->codebook->fingerprint()}});
    });
  });

  server.Post("/stylize", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] {
      const auto body = parse_body(req);
      if (!body.contains("content") || !body["content"].is_string()) throw ContractError("missing 'content'");
      if (!body.contains("weights") || !body["weights"].is_array()) throw ContractError("missing 'weights'");
      if (body.value("format", std::string("png")) != "png") throw ContractError("only 'png' output is supported");
      StyleMix mix;
      for (const auto& w : body["weights"]) {
        if (!w.is_object() || !w.contains("style_id") || !w["style_id"].is_string() || !w.contains("w")) {
          throw ContractError("each weight needs 'style_id' and 'w'");
        }
        mix.weights.emplace_back(w["style_id"].get<std::string>(), finite_number(w["w"], "weight"));
      }
      if (body.contains("alpha")) mix.alpha = finite_number(body["alpha"], "alpha");
      const auto content = decode_image<float>(base64_decode(body["content"].get<std::string>()));
      const auto snap = svc.snapshot();
      const auto out = stylize_png(*snap->model, *snap->codebook, content, mix);
      nlohmann::json reply = {{"image", base64_encode(out.png)}, {"millis", out.millis}, {"normalized", out.normalized}};
      if (out.normalized) reply["warning"] = "weights did not sum to 1 and were normalized";
      send_json(res, 200, reply);
    });
  });

  server.Post("/styles", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] {
      const auto body = parse_body(req);
      if (!body.contains("name") || !body["name"].is_string()) throw ContractError("missing 'name'");
      if (!body.contains("image") || !body["image"].is_string()) throw ContractError("missing 'image'");
      auto image = decode_image<float>(base64_decode(body["image"].get<std::string>()));
      const auto id = svc.submit_style(body["name"].get<std::string>(), std::move(image));
      send_json(res, 202, {{"job_id", id}});
    });
  });

  server.Get("/jobs/:id", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(svc, res, [&] {
      const auto job = svc.job(req.path_params.at("id"));
      if (!job) return send_error(res, 404, "unknown job '" + req.path_params.at("id") + "'");
      send_json(res, 200, *job);
    });
  });
}

}  // namespace samst
