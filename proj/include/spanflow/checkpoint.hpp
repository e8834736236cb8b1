#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/gnn.hpp"

namespace spanflow::gnn {

inline constexpr int kCheckpointVersion = 1;

// {shape, dtype: "f32", data: base64 of little-endian row-major floats}
nlohmann::json encode_tensor(const Eigen::MatrixXd& m);
nlohmann::json encode_vector(const Eigen::VectorXd& v);
Eigen::MatrixXd decode_tensor(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig model;
  nlohmann::json config;  // full echo: model + training hyperparameters (margin, lr, ...)
  EncoderStack stack;
  Eigen::MatrixXd embedding;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Per-layer head-averaged maps, same tensor encoding as checkpoints.
nlohmann::json attention_dump(const AttentionTensor& attention);

}  // namespace spanflow::gnn
