#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "foley/ad/nn.hpp"
#include "foley/ad/optim.hpp"

namespace foley::io {

// A checkpoint is a directory: manifest.json plus one f64 tensor file per
// parameter/buffer (and optimizer moment, when given).
void save_checkpoint(const std::filesystem::path& dir, ad::Module& module, const nlohmann::json& meta,
                     const ad::OptimizerState* optimizer = nullptr);

// Loads parameters in place; names and shapes must match. Returns the stored meta.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, ad::Module& module,
                               ad::OptimizerState* optimizer = nullptr);

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

}  // namespace foley::io
