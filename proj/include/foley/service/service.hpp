#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "foley/ad/tensor.hpp"
#include "foley/dsp/envelope.hpp"

namespace httplib {
class Server;
}

namespace foley::dit {
struct FoleyModel;
}

namespace foley::service {

struct GenerateParams {
  std::optional<int> semantic_class;
  std::optional<std::vector<double>> embedding;
  std::size_t steps = 150;
  double cfg_scale = 2.0;
  std::uint64_t seed = 0;
};

// Audio for a target envelope; must be deterministic in its arguments.
using Generator = std::function<dsp::Waveform(const dsp::Envelope& envelope, const GenerateParams& params)>;
// Envelope for a [T, D] feature sequence.
using FeaturePredictor = std::function<dsp::Envelope(const ad::Tensor& features)>;

struct ServiceConfig {
  std::filesystem::path data_dir = ".foleyctl/service";
  std::size_t workers = 1;
  std::size_t max_body_bytes = 16u << 20;
  std::string cors_origin = "*";
  dsp::RmsConfig rms = dsp::RmsConfig::toy();
};

// Session store, job queue and HTTP routes.
class FoleyService {
 public:
  FoleyService(ServiceConfig cfg, Generator generator, FeaturePredictor predictor = {});
  ~FoleyService();
  FoleyService(const FoleyService&) = delete;
  FoleyService& operator=(const FoleyService&) = delete;

  void mount(httplib::Server& server);

  // Binds and serves until stop(); port 0 picks a free port.
  bool listen(const std::string& host, int port);
  int bind_port(const std::string& host, int port);
  bool listen_after_bind();
  void stop();

  // Blocks until no job is pending or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Generator backed by a loaded model; classes index its semantic table.
Generator model_generator(std::shared_ptr<dit::FoleyModel> model);

}  // namespace foley::service
