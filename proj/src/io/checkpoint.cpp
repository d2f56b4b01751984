#include "foley/io/checkpoint.hpp"

#include "foley/error.hpp"
#include <map>

#include "foley/io/envelope_json.hpp"
#include "foley/io/tensor_file.hpp"

namespace foley::io {

namespace fs = std::filesystem;

namespace {

std::string file_name_for(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
  return out + ".ftns";
}

TensorData as_tensor_data(const ad::Shape& shape, std::span<const double> values) {
  TensorData t;
  t.dims.assign(shape.begin(), shape.end());
  t.values.assign(values.begin(), values.end());
  return t;
}

}  // namespace

void save_checkpoint(const fs::path& dir, ad::Module& module, const nlohmann::json& meta,
                     const ad::OptimizerState* optimizer) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "foley-checkpoint-1";
  manifest["meta"] = meta;
  manifest["params"] = nlohmann::json::array();
  manifest["buffers"] = nlohmann::json::array();
  module.visit_parameters([&](const std::string& name, ad::Tensor& t) {
    const std::string file = "param." + file_name_for(name);
    write_tensor(dir / file, as_tensor_data(t.shape(), t.data()), DType::f64);
    manifest["params"].push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  });
  module.visit_buffers([&](const std::string& name, std::vector<double>& b) {
    const std::string file = "buffer." + file_name_for(name);
    write_tensor(dir / file, as_tensor_data({b.size()}, b), DType::f64);
    manifest["buffers"].push_back({{"name", name}, {"size", b.size()}, {"file", file}});
  });
  if (optimizer && !optimizer->m.empty()) {
    nlohmann::json opt{{"step", optimizer->step}, {"moments", nlohmann::json::array()}};
    for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
      const std::string mf = "adam.m." + std::to_string(i) + ".ftns", vf = "adam.v." + std::to_string(i) + ".ftns";
      write_tensor(dir / mf, as_tensor_data({optimizer->m[i].size()}, optimizer->m[i]), DType::f64);
      write_tensor(dir / vf, as_tensor_data({optimizer->v[i].size()}, optimizer->v[i]), DType::f64);
      opt["moments"].push_back({{"m", mf}, {"v", vf}});
    }
    manifest["optimizer"] = opt;
  }
  write_json(dir / "manifest.json", manifest);
}

nlohmann::json read_checkpoint_meta(const fs::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", std::string()) != "foley-checkpoint-1")
    throw InvalidInput(dir.string() + " is not a checkpoint directory");
  return manifest["meta"];
}

nlohmann::json load_checkpoint(const fs::path& dir, ad::Module& module, ad::OptimizerState* optimizer) {
  if (!fs::exists(dir / "manifest.json")) throw InvalidInput("no checkpoint at " + dir.string());
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", std::string()) != "foley-checkpoint-1")
    throw InvalidInput(dir.string() + " is not a checkpoint directory");

  std::map<std::string, nlohmann::json> params;
  for (const auto& p : manifest["params"]) params[p["name"].get<std::string>()] = p;
  std::size_t matched = 0;
  module.visit_parameters([&](const std::string& name, ad::Tensor& t) {
    auto it = params.find(name);
    if (it == params.end()) throw InvalidInput("checkpoint is missing parameter " + name);
    const auto data = read_tensor(dir / it->second["file"].get<std::string>());
    const ad::Shape shape(data.dims.begin(), data.dims.end());
    if (shape != t.shape())
      throw InvalidInput("checkpoint parameter " + name + " has shape " + ad::shape_str(shape) + ", model expects " +
                         ad::shape_str(t.shape()));
    std::copy(data.values.begin(), data.values.end(), t.mutable_data().begin());
    ++matched;
  });
  if (matched != params.size())
    throw InvalidInput("checkpoint has " + std::to_string(params.size()) + " parameters, model has " +
                       std::to_string(matched));

  std::map<std::string, nlohmann::json> buffers;
  for (const auto& b : manifest["buffers"]) buffers[b["name"].get<std::string>()] = b;
  module.visit_buffers([&](const std::string& name, std::vector<double>& b) {
    auto it = buffers.find(name);
    if (it == buffers.end()) throw InvalidInput("checkpoint is missing buffer " + name);
    const auto data = read_tensor(dir / it->second["file"].get<std::string>());
    if (data.values.size() != b.size()) throw InvalidInput("checkpoint buffer " + name + " has wrong size");
    b = data.values;
  });

  if (optimizer && manifest.contains("optimizer")) {
    const auto& opt = manifest["optimizer"];
    optimizer->step = opt["step"].get<std::size_t>();
    optimizer->m.clear();
    optimizer->v.clear();
    for (const auto& mv : opt["moments"]) {
      optimizer->m.push_back(read_tensor(dir / mv["m"].get<std::string>()).values);
      optimizer->v.push_back(read_tensor(dir / mv["v"].get<std::string>()).values);
    }
  }
  return manifest["meta"];
}

}  // namespace foley::io
