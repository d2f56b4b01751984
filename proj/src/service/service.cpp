#include "foley/service/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "foley/dit/pipeline.hpp"
#include "foley/error.hpp"
#include "foley/io/envelope_json.hpp"
#include "foley/io/tensor_file.hpp"
#include "foley/io/wav.hpp"
#include "foley/metrics/metrics.hpp"

// Must follow the Eigen includes.
#include <httplib.h>

namespace foley::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Request-level failure carrying the HTTP status and an optional frame index.
struct HttpError : std::runtime_error {
  int status;
  std::optional<std::size_t> index;
  HttpError(int status, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(what), status(status), index(index) {}
};

enum class JobStatus { pending, running, done, failed };

const char* status_name(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "failed";
}

JobStatus status_from(const std::string& s) {
  if (s == "pending") return JobStatus::pending;
  if (s == "running") return JobStatus::running;
  if (s == "done") return JobStatus::done;
  return JobStatus::failed;
}

struct Job {
  std::string id;
  std::string session;
  std::size_t revision = 0;
  GenerateParams params;
  JobStatus status = JobStatus::pending;
  std::string artifact;
  std::string error;
  std::optional<double> e_l1;
};

struct Session {
  std::string id;
  std::vector<dsp::Envelope> revisions;  // append-only
  std::optional<int> semantic_class;
  std::optional<std::vector<double>> embedding;
  std::map<std::size_t, std::string> latest_artifact;  // revision -> artifact key
  std::optional<std::string> active_job;
};

json params_to_json(const GenerateParams& p) {
  json j{{"steps", p.steps}, {"cfg_scale", p.cfg_scale}, {"seed", p.seed}};
  if (p.semantic_class) j["class"] = *p.semantic_class;
  if (p.embedding) j["embedding"] = *p.embedding;
  return j;
}

GenerateParams params_from_json(const json& j) {
  GenerateParams p;
  p.steps = j.value("steps", p.steps);
  p.cfg_scale = j.value("cfg_scale", p.cfg_scale);
  p.seed = j.value("seed", p.seed);
  if (j.contains("class") && !j["class"].is_null()) p.semantic_class = j["class"].get<int>();
  if (j.contains("embedding") && !j["embedding"].is_null()) p.embedding = j["embedding"].get<std::vector<double>>();
  return p;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

// FNV-1a over the canonical JSON of (revision, params).
std::string artifact_key(std::size_t revision, const GenerateParams& p) {
  const std::string text = json{{"revision", revision}, {"params", params_to_json(p)}}.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

json error_body(const std::string& what, std::optional<std::size_t> index = std::nullopt) {
  json j{{"error", what}};
  if (index) j["index"] = *index;
  return j;
}

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

// Envelope from a request object; 422 names the first bad frame.
dsp::Envelope envelope_from_request(const json& j) {
  if (!j.is_object() || !j.contains("values") || !j["values"].is_array())
    throw HttpError(422, "envelope needs a \"values\" array");
  dsp::Envelope e;
  e.hop = j.value("hop", std::size_t{1});
  e.source_sample_rate = j.value("source_sample_rate", std::size_t{1});
  const auto& values = j["values"];
  if (values.empty()) throw HttpError(422, "envelope is empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].is_number()) throw HttpError(422, "envelope value is not a number", i);
    e.values.push_back(values[i].get<double>());
  }
  if (auto bad = dsp::first_out_of_range(e.values)) throw HttpError(422, "envelope value outside [0, 1]", *bad);
  if (e.hop == 0 || e.source_sample_rate == 0) throw HttpError(422, "hop and source_sample_rate must be positive");
  return e;
}

std::optional<std::size_t> query_size(const httplib::Request& req, const std::string& key) {
  if (!req.has_param(key)) return std::nullopt;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw HttpError(400, "query parameter " + key + " must be a non-negative integer");
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

struct FoleyService::Impl {
  ServiceConfig cfg;
  Generator generator;
  FeaturePredictor predictor;

  std::mutex mu;
  std::condition_variable work_cv, idle_cv;
  std::deque<std::string> queue;
  std::size_t running = 0;
  bool stopping = false;
  std::map<std::string, Session> sessions;
  std::map<std::string, Job> jobs;
  std::uint64_t next_session = 1, next_job = 1;
  std::vector<std::thread> workers;
  httplib::Server server;

  Impl(ServiceConfig c, Generator g, FeaturePredictor p)
      : cfg(std::move(c)), generator(std::move(g)), predictor(std::move(p)) {
    if (cfg.workers == 0) throw InvalidInput("service needs at least one worker");
    cfg.rms.validate();
    fs::create_directories(cfg.data_dir / "sessions");
    fs::create_directories(cfg.data_dir / "jobs");
    restore();
    for (std::size_t i = 0; i < cfg.workers; ++i) workers.emplace_back([this] { worker_loop(); });
  }

  ~Impl() {
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    work_cv.notify_all();
    for (auto& t : workers) t.join();
  }

  fs::path session_dir(const std::string& id) const { return cfg.data_dir / "sessions" / id; }
  fs::path job_path(const std::string& id) const { return cfg.data_dir / "jobs" / (id + ".json"); }
  fs::path audio_path(const Session& s, const std::string& key) const {
    return session_dir(s.id) / "artifacts" / (key + ".wav");
  }
  fs::path measured_path(const Session& s, const std::string& key) const {
    return session_dir(s.id) / "artifacts" / (key + ".rms.json");
  }

  // --- persistence (callers hold mu) ---

  void persist_session(const Session& s) const {
    json artifacts = json::object();
    for (const auto& [rev, key] : s.latest_artifact) artifacts[std::to_string(rev)] = key;
    json j{{"id", s.id}, {"revisions", s.revisions.size()}, {"artifacts", artifacts}};
    if (s.semantic_class) j["class"] = *s.semantic_class;
    if (s.embedding) j["embedding"] = *s.embedding;
    io::write_json(session_dir(s.id) / "session.json", j);
  }

  void persist_revision(const Session& s, std::size_t rev) const {
    const fs::path p = session_dir(s.id) / "revisions" / (std::to_string(rev) + ".json");
    if (!fs::exists(p)) io::write_envelope(p, s.revisions[rev]);
  }

  void persist_job(const Job& job) const {
    json j{{"id", job.id},
           {"session", job.session},
           {"revision", job.revision},
           {"params", params_to_json(job.params)},
           {"status", status_name(job.status)}};
    if (!job.artifact.empty()) j["artifact"] = job.artifact;
    if (!job.error.empty()) j["error"] = job.error;
    if (job.e_l1) j["e_l1_vs_target"] = *job.e_l1;
    io::write_json(job_path(job.id), j);
  }

  static std::uint64_t numeric_suffix(const std::string& id) {
    try {
      return std::stoull(id.substr(1));
    } catch (const std::exception&) {
      return 0;
    }
  }

  void restore() {
    for (const auto& entry : fs::directory_iterator(cfg.data_dir / "sessions")) {
      const fs::path meta = entry.path() / "session.json";
      if (!fs::exists(meta)) continue;
      const json j = io::read_json(meta);
      Session s;
      s.id = j.at("id").get<std::string>();
      const auto n = j.at("revisions").get<std::size_t>();
      for (std::size_t r = 0; r < n; ++r)
        s.revisions.push_back(io::read_envelope(entry.path() / "revisions" / (std::to_string(r) + ".json")));
      if (j.contains("class")) s.semantic_class = j["class"].get<int>();
      if (j.contains("embedding")) s.embedding = j["embedding"].get<std::vector<double>>();
      for (const auto& [rev, key] : j.at("artifacts").items()) s.latest_artifact[std::stoul(rev)] = key;
      next_session = std::max(next_session, numeric_suffix(s.id) + 1);
      sessions[s.id] = std::move(s);
    }
    for (const auto& entry : fs::directory_iterator(cfg.data_dir / "jobs")) {
      if (entry.path().extension() != ".json") continue;
      const json j = io::read_json(entry.path());
      Job job;
      job.id = j.at("id").get<std::string>();
      job.session = j.at("session").get<std::string>();
      job.revision = j.at("revision").get<std::size_t>();
      job.params = params_from_json(j.at("params"));
      job.status = status_from(j.at("status").get<std::string>());
      job.artifact = j.value("artifact", "");
      job.error = j.value("error", "");
      if (j.contains("e_l1_vs_target")) job.e_l1 = j["e_l1_vs_target"].get<double>();
      // At-most-once: work interrupted by a restart is not re-run.
      if (job.status == JobStatus::pending || job.status == JobStatus::running) {
        job.status = JobStatus::failed;
        job.error = "interrupted by service restart";
        persist_job(job);
      }
      next_job = std::max(next_job, numeric_suffix(job.id) + 1);
      jobs[job.id] = std::move(job);
    }
  }

  // --- jobs ---

  void worker_loop() {
    for (;;) {
      std::string job_id;
      GenerateParams params;
      dsp::Envelope target;
      fs::path wav_path, rms_path;
      {
        std::unique_lock lock(mu);
        work_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        job_id = queue.front();
        queue.pop_front();
        Job& job = jobs.at(job_id);
        const Session& s = sessions.at(job.session);
        job.status = JobStatus::running;
        persist_job(job);
        ++running;
        params = job.params;
        target = s.revisions[job.revision];
        job.artifact = artifact_key(job.revision, params);
        wav_path = audio_path(s, job.artifact);
        rms_path = measured_path(s, job.artifact);
      }

      std::string error;
      std::optional<double> e_l1;
      try {
        dsp::Envelope measured;
        if (fs::exists(wav_path) && fs::exists(rms_path)) {
          measured = io::read_envelope(rms_path);
        } else {
          const dsp::Waveform w = generator(target, params);
          measured = dsp::compute_rms(w, cfg.rms);
          fs::create_directories(wav_path.parent_path());
          io::write_wav(wav_path, w, io::WavEncoding::pcm16);
          io::write_envelope(rms_path, measured);
        }
        e_l1 = metrics::e_l1(measured, dsp::resample_envelope(target, measured.size()));
      } catch (const std::exception& e) {
        error = e.what();
      }

      {
        std::lock_guard lock(mu);
        Job& job = jobs.at(job_id);
        Session& s = sessions.at(job.session);
        if (error.empty()) {
          job.status = JobStatus::done;
          job.e_l1 = e_l1;
          s.latest_artifact[job.revision] = job.artifact;
          persist_session(s);
        } else {
          job.status = JobStatus::failed;
          job.error = error;
          job.artifact.clear();
        }
        persist_job(job);
        s.active_job.reset();
        --running;
      }
      idle_cv.notify_all();
    }
  }

  // --- handlers (each takes the lock it needs) ---

  Session& find_session(const std::string& id) {
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "unknown session " + id);
    return it->second;
  }

  std::size_t revision_param(const httplib::Request& req, const Session& s) {
    const auto rev = query_size(req, "rev");
    if (!rev) return s.revisions.size() - 1;
    if (*rev >= s.revisions.size()) throw HttpError(404, "session " + s.id + " has no revision " + std::to_string(*rev));
    return *rev;
  }

  void apply_semantic(const json& j, std::optional<int>& cls, std::optional<std::vector<double>>& emb) {
    const bool has_class = j.contains("class") && !j["class"].is_null();
    const bool has_emb = j.contains("embedding") && !j["embedding"].is_null();
    if (has_class && has_emb) throw HttpError(422, "give either class or embedding, not both");
    try {
      if (has_class) {
        cls = j["class"].get<int>();
        emb.reset();
        if (*cls < 0) throw HttpError(422, "class must be non-negative");
      }
      if (has_emb) {
        emb = j["embedding"].get<std::vector<double>>();
        cls.reset();
        if (emb->empty()) throw HttpError(422, "embedding is empty");
      }
    } catch (const json::exception& e) {
      throw HttpError(422, std::string("bad semantic selection: ") + e.what());
    }
  }

  json session_json(const Session& s) const {
    json j{{"id", s.id},
           {"revision", s.revisions.size() - 1},
           {"envelope", io::envelope_to_json(s.revisions.back())}};
    if (s.semantic_class) j["class"] = *s.semantic_class;
    if (s.embedding) j["embedding"] = *s.embedding;
    if (s.active_job) j["active_job"] = *s.active_job;
    return j;
  }

  json job_json(const Job& job) const {
    json j{{"id", job.id},
           {"session", job.session},
           {"revision", job.revision},
           {"status", status_name(job.status)},
           {"params", params_to_json(job.params)}};
    if (job.e_l1) j["e_l1_vs_target"] = *job.e_l1;
    if (!job.error.empty()) j["error"] = job.error;
    if (job.status == JobStatus::done) j["artifact"] = job.artifact;
    return j;
  }

  void extract(const httplib::Request& req, httplib::Response& res) {
    dsp::RmsConfig rms = cfg.rms;
    if (auto w = query_size(req, "window")) rms.window = *w;
    if (auto h = query_size(req, "hop")) rms.hop = *h;
    try {
      rms.validate();
    } catch (const InvalidInput& e) {
      throw HttpError(422, e.what());
    }
    dsp::Waveform w;
    try {
      w = dsp::normalize_waveform(dsp::downmix(io::decode_wav(
          {reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()})));
    } catch (const Error& e) {
      throw HttpError(422, e.what());
    }
    send_json(res, io::envelope_to_json(dsp::compute_rms(w, rms)));
  }

  void predict(const httplib::Request& req, httplib::Response& res) {
    if (!predictor) throw HttpError(503, "no envelope predictor loaded");
    ad::Tensor features;
    try {
      if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
        const json j = parse_body(req);
        const auto shape = j.at("shape").get<std::vector<std::size_t>>();
        features = ad::Tensor::from_data(ad::Shape(shape.begin(), shape.end()), j.at("values").get<std::vector<double>>());
      } else {
        const auto t = io::decode_tensor({reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()});
        features = ad::Tensor::from_data(ad::Shape(t.dims.begin(), t.dims.end()), t.values);
      }
    } catch (const HttpError&) {
      throw;
    } catch (const std::exception& e) {
      throw HttpError(422, std::string("bad feature tensor: ") + e.what());
    }
    dsp::Envelope env;
    try {
      env = predictor(features);
    } catch (const ShapeError& e) {
      throw HttpError(422, e.what());
    } catch (const InvalidInput& e) {
      throw HttpError(422, e.what());
    }
    send_json(res, io::envelope_to_json(env));
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    Session s;
    s.revisions.push_back(envelope_from_request(body.contains("envelope") ? body["envelope"] : body));
    apply_semantic(body, s.semantic_class, s.embedding);
    std::lock_guard lock(mu);
    s.id = "s" + std::to_string(next_session++);
    persist_revision(s, 0);
    persist_session(s);
    const json out = session_json(s);
    sessions[s.id] = std::move(s);
    send_json(res, out, 201);
  }

  void get_envelope(const httplib::Request& req, httplib::Response& res, const std::string& id) {
    std::lock_guard lock(mu);
    const Session& s = find_session(id);
    const std::size_t rev = revision_param(req, s);
    send_json(res, {{"revision", rev}, {"envelope", io::envelope_to_json(s.revisions[rev])}});
  }

  void put_envelope(const httplib::Request& req, httplib::Response& res, const std::string& id) {
    const json body = parse_body(req);
    const dsp::Envelope e = envelope_from_request(body.contains("envelope") ? body["envelope"] : body);
    std::lock_guard lock(mu);
    Session& s = find_session(id);
    const std::size_t frames = s.revisions.back().size();
    if (e.size() != frames)
      throw HttpError(422, "envelope has " + std::to_string(e.size()) + " frames, session has " + std::to_string(frames),
                      std::min(e.size(), frames));
    std::optional<int> cls = s.semantic_class;
    std::optional<std::vector<double>> emb = s.embedding;
    apply_semantic(body, cls, emb);
    s.semantic_class = cls;
    s.embedding = emb;
    s.revisions.push_back(e);
    persist_revision(s, s.revisions.size() - 1);
    persist_session(s);
    send_json(res, session_json(s));
  }

  void start_generation(const httplib::Request& req, httplib::Response& res, const std::string& id) {
    if (!generator) throw HttpError(503, "no generation model loaded");
    const json body = req.body.empty() ? json::object() : parse_body(req);
    if (!body.is_object()) throw HttpError(422, "generate body must be a JSON object");
    std::lock_guard lock(mu);
    Session& s = find_session(id);
    if (s.active_job) throw HttpError(409, "session " + id + " already has job " + *s.active_job + " in progress");
    GenerateParams p;
    p.semantic_class = s.semantic_class;
    p.embedding = s.embedding;
    apply_semantic(body, p.semantic_class, p.embedding);
    try {
      p.steps = body.value("steps", p.steps);
      p.cfg_scale = body.value("cfg_scale", p.cfg_scale);
      p.seed = body.value("seed", p.seed);
    } catch (const json::exception& e) {
      throw HttpError(422, std::string("bad generation parameters: ") + e.what());
    }
    if (p.steps == 0) throw HttpError(422, "steps must be positive");
    if (!std::isfinite(p.cfg_scale)) throw HttpError(422, "cfg_scale must be finite");
    Job job;
    job.id = "j" + std::to_string(next_job++);
    job.session = id;
    job.revision = s.revisions.size() - 1;
    job.params = p;
    persist_job(job);
    s.active_job = job.id;
    const json out = job_json(job);
    jobs[job.id] = std::move(job);
    queue.push_back(out["id"].get<std::string>());
    work_cv.notify_one();
    send_json(res, out, 202);
  }

  void get_job(httplib::Response& res, const std::string& id) {
    std::lock_guard lock(mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw HttpError(404, "unknown job " + id);
    send_json(res, job_json(it->second));
  }

  void get_artifact(const httplib::Request& req, httplib::Response& res, const std::string& id, bool measured) {
    fs::path path;
    {
      std::lock_guard lock(mu);
      const Session& s = find_session(id);
      const std::size_t rev = revision_param(req, s);
      auto it = s.latest_artifact.find(rev);
      if (it == s.latest_artifact.end())
        throw HttpError(404, "no generated audio for revision " + std::to_string(rev));
      path = measured ? measured_path(s, it->second) : audio_path(s, it->second);
    }
    if (!fs::exists(path)) throw HttpError(404, "artifact missing on disk");
    if (measured)
      res.set_content(read_text(path), "application/json");
    else
      res.set_content(read_text(path), "audio/wav");
  }

  template <class F>
  httplib::Server::Handler wrap(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        send_json(res, error_body(e.what(), e.index), e.status);
      } catch (const std::exception& e) {
        send_json(res, error_body(e.what()), 500);
      }
    };
  }

  void mount(httplib::Server& srv) {
    srv.set_payload_max_length(cfg.max_body_bytes);
    srv.set_default_headers({{"Access-Control-Allow-Origin", cfg.cors_origin},
                             {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_json(res, error_body(httplib::status_message(res.status)), res.status);
    });

    srv.Post(R"(/v1/envelopes:extract)", wrap([this](const auto& req, auto& res) { extract(req, res); }));
    srv.Post(R"(/v1/envelopes:predict)", wrap([this](const auto& req, auto& res) { predict(req, res); }));
    srv.Post(R"(/v1/sessions)", wrap([this](const auto& req, auto& res) { create_session(req, res); }));
    srv.Get(R"(/v1/sessions/([^/]+)/envelope)",
            wrap([this](const auto& req, auto& res) { get_envelope(req, res, req.matches[1]); }));
    srv.Put(R"(/v1/sessions/([^/]+)/envelope)",
            wrap([this](const auto& req, auto& res) { put_envelope(req, res, req.matches[1]); }));
    srv.Post(R"(/v1/sessions/([^/]+)/generate)",
             wrap([this](const auto& req, auto& res) { start_generation(req, res, req.matches[1]); }));
    srv.Get(R"(/v1/jobs/([^/]+))", wrap([this](const auto& req, auto& res) { get_job(res, req.matches[1]); }));
    srv.Get(R"(/v1/sessions/([^/]+)/audio)",
            wrap([this](const auto& req, auto& res) { get_artifact(req, res, req.matches[1], false); }));
    srv.Get(R"(/v1/sessions/([^/]+)/measured-envelope)",
            wrap([this](const auto& req, auto& res) { get_artifact(req, res, req.matches[1], true); }));
  }
};

FoleyService::FoleyService(ServiceConfig cfg, Generator generator, FeaturePredictor predictor)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(generator), std::move(predictor))) {
  impl_->mount(impl_->server);
}

FoleyService::~FoleyService() { stop(); }

void FoleyService::mount(httplib::Server& server) { impl_->mount(server); }

bool FoleyService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int FoleyService::bind_port(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool FoleyService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void FoleyService::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void FoleyService::wait_idle() {
  std::unique_lock lock(impl_->mu);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && impl_->running == 0; });
}

Generator model_generator(std::shared_ptr<dit::FoleyModel> model) {
  auto lock = std::make_shared<std::mutex>();
  return [model, lock](const dsp::Envelope& envelope, const GenerateParams& p) {
    dit::GenerateRequest req;
    req.envelope = envelope;
    req.steps = p.steps;
    req.cfg_scale = p.cfg_scale;
    req.seed = p.seed;
    if (p.semantic_class) {
      if (static_cast<std::size_t>(*p.semantic_class) >= model->num_classes())
        throw InvalidInput("class " + std::to_string(*p.semantic_class) + " outside the model's table");
      req.semantic = model->semantic_for_class(*p.semantic_class);
    } else if (p.embedding) {
      req.semantic = ad::Tensor::from_data({1, p.embedding->size()}, *p.embedding);
    }
    // One model instance; generations are serialized on it.
    std::lock_guard guard(*lock);
    return dit::generate(*model, req);
  };
}

}  // namespace foley::service
